"""Exception types shared across the package."""


class PermonError(Exception):
    """Base class for all package errors."""


class ConfigError(PermonError):
    """A mission or scenario description violates its constraints."""


class PolicyError(PermonError):
    """A policy violates the switching-location / dwell-time constraints."""


class NumericError(PermonError):
    """A numeric routine failed to converge or produced non-finite values."""
