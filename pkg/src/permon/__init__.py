"""1-D multi-agent patrol scheduling: exact simulation, event-driven
gradients, and projected gradient descent."""

from .errors import ConfigError, NumericError, PermonError, PolicyError
from .ipa import SensitivityState, propagate
from .model import (MissionConfig, Policy, SensingInfo, joint_detection,
                    sensing_probability, uncertainty_rate, validate_policy)
from .optimizer import (ArmijoStep, ConstantStep, OptimizationRun,
                        OptimizerSettings, initialize, optimize, project,
                        projected_gradient)
from .oracle import dense_simulate, finite_difference_gradient, gradient_check
from .scenario import (Scenario, builtin_scenario, load_scenario,
                       parse_scenario)
from .simulator import (Event, EventKind, NumericSettings, Trajectory,
                        build_profile, cost, segment_breakpoints, simulate,
                        stability_report)
from .stochastic import RateProcess, sample_rate_process, simulate_with_process

__version__ = "0.1.0"

__all__ = [
    "ArmijoStep", "ConfigError", "ConstantStep", "Event", "EventKind",
    "MissionConfig", "NumericError", "NumericSettings", "OptimizationRun",
    "OptimizerSettings", "PermonError", "Policy", "PolicyError",
    "RateProcess", "Scenario", "SensingInfo", "SensitivityState",
    "Trajectory", "build_profile", "builtin_scenario", "cost",
    "dense_simulate", "finite_difference_gradient", "gradient_check",
    "initialize", "joint_detection", "load_scenario", "optimize",
    "parse_scenario", "project", "projected_gradient", "propagate",
    "sample_rate_process", "segment_breakpoints", "sensing_probability",
    "simulate", "simulate_with_process", "stability_report",
    "uncertainty_rate", "validate_policy", "__version__",
]
