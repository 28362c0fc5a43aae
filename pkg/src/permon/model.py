"""Mission description and the pointwise sensing / uncertainty formulas.

Everything here is stateless: the config objects are immutable value types and
the three rate/probability functions are pure, so they can be evaluated from
any thread without coordination.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PolicyError

log = logging.getLogger(__name__)


def sensing_probability(x, s, r):
    """Detection probability of a target at ``x`` for a sensor at ``s``.

    Linear decay from 1 at x == s to 0 at distance ``r``; zero beyond.
    Accepts scalars or broadcastable arrays.
    """
    if np.any(np.asarray(r) <= 0):
        raise ConfigError(f"sensing range must be positive, got {r}")
    return np.maximum(1.0 - np.abs(np.asarray(x, dtype=float) - s) / r, 0.0)


def joint_detection(alpha, positions, ranges):
    """Probability that at least one agent detects an event at ``alpha``.

    Detections are independent across agents, so the joint probability is
    1 - prod(1 - p_n).
    """
    positions = np.atleast_1d(np.asarray(positions, dtype=float))
    ranges = np.atleast_1d(np.asarray(ranges, dtype=float))
    if positions.shape[-1] != ranges.shape[-1] or positions.shape[-1] < 1:
        raise ConfigError("positions and ranges must have equal length >= 1")
    miss = 1.0
    for k in range(positions.shape[-1]):
        miss = miss * (1.0 - sensing_probability(alpha, positions[..., k], ranges[..., k]))
    return 1.0 - miss


def uncertainty_rate(R, A, B, P):
    """Growth rate of the uncertainty level: A - B*P, held at zero on the floor.

    The ``R == 0`` branch uses exact equality; inside the simulator the floor
    is tracked by a discrete flag instead of comparing floats.
    """
    rate = A - B * np.asarray(P, dtype=float)
    return np.where((np.asarray(R) == 0.0) & (rate <= 0.0), 0.0, rate)


@dataclass(frozen=True, eq=False)
class SensingInfo:
    """The sensing geometry a gradient evaluation is allowed to see.

    Deliberately excludes the growth rates: gradients must be computable from
    observed event times alone, without any model of how uncertainty grows.
    """

    points: np.ndarray     # sampling positions, ordered
    decay: float           # sensing decay rate B
    ranges: np.ndarray     # per-agent sensing range r_n

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_agents(self) -> int:
        return len(self.ranges)


def centered_points(length: float, m: int) -> np.ndarray:
    """Centers of the even partition of [0, length] into m cells."""
    return (2.0 * np.arange(1, m + 1) - 1.0) * length / (2.0 * m)


@dataclass(frozen=True, eq=False)
class MissionConfig:
    """Static description of a monitoring mission.

    Units: distances share one unit, time another; growth/decay rates are
    uncertainty per unit time.
    """

    length: float                 # mission space is [0, length]
    lo: float                     # agents restricted to [lo, hi]
    hi: float
    points: np.ndarray            # sampling positions alpha_i, ordered
    growth: np.ndarray            # per-point growth rate A_i
    decay: float                  # sensing decay rate B
    ranges: np.ndarray            # per-agent sensing range r_n
    starts: np.ndarray            # initial agent positions s_n(0)
    horizon: float                # mission duration T
    r0: np.ndarray                # initial uncertainty R_i(0)
    no_crossing: bool = False     # keep agents ordered (tested, not enforced)

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_agents(self) -> int:
        return len(self.ranges)

    def sensing(self) -> SensingInfo:
        return SensingInfo(points=self.points, decay=float(self.decay), ranges=self.ranges)

    @staticmethod
    def create(
        length: float,
        decay: float,
        horizon: float,
        agents,                      # iterable of (start, range) pairs
        lo: float = 0.0,
        hi: float | None = None,
        points=None,
        n_points: int | None = None,
        growth=0.1,
        r0=4.0,
        no_crossing: bool = False,
    ) -> "MissionConfig":
        """Validated constructor; broadcasts scalar growth/r0 over all points.

        When ``points`` is omitted they are generated as the centers of the
        even partition of [0, length] into ``n_points`` cells.
        """
        hi = float(length) if hi is None else float(hi)
        if points is None:
            if n_points is None:
                raise ConfigError("provide either explicit points or n_points")
            points = centered_points(float(length), int(n_points))
        points = np.asarray(points, dtype=float)
        m = len(points)
        if m < 1:
            raise ConfigError("at least one sampling point is required")
        growth = np.broadcast_to(np.asarray(growth, dtype=float), (m,)).copy()
        r0 = np.broadcast_to(np.asarray(r0, dtype=float), (m,)).copy()
        agents = list(agents)
        if not agents:
            raise ConfigError("at least one agent is required")
        starts = np.array([float(a[0]) for a in agents])
        ranges = np.array([float(a[1]) for a in agents])
        cfg = MissionConfig(
            length=float(length), lo=float(lo), hi=hi, points=points,
            growth=growth, decay=float(decay), ranges=ranges, starts=starts,
            horizon=float(horizon), r0=r0, no_crossing=bool(no_crossing),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not (0.0 <= self.lo < self.hi <= self.length):
            raise ConfigError(
                f"need 0 <= lo < hi <= length, got lo={self.lo} hi={self.hi} length={self.length}")
        if np.any(self.points < 0.0) or np.any(self.points > self.length):
            raise ConfigError("sampling points must lie inside [0, length]")
        if np.any(np.diff(self.points) < 0.0):
            raise ConfigError("sampling points must be ordered")
        if np.any(self.growth <= 0.0) or np.any(self.growth >= self.decay):
            raise ConfigError(
                f"growth rates must satisfy 0 < A_i < B={self.decay}, got {self.growth}")
        if np.any(self.ranges <= 0.0):
            raise ConfigError("sensing ranges must be positive")
        if np.any(self.starts < self.lo) or np.any(self.starts > self.hi):
            raise ConfigError("agent start positions must lie inside [lo, hi]")
        if np.any(self.r0 < 0.0):
            raise ConfigError("initial uncertainty must be nonnegative")
        if self.horizon <= 0.0:
            raise ConfigError("horizon must be positive")
        if self.no_crossing and np.any(np.diff(self.starts) <= 0.0):
            raise ConfigError("no_crossing requires strictly increasing start positions")
        # Coverage feasibility: without it some points can never be sensed.
        # The reference treatment leaves severity open; we warn and proceed.
        if not np.any(self.lo <= self.ranges) or not np.any(self.hi >= self.length - self.ranges):
            log.warning(
                "coverage infeasible: no agent can reach within range of both ends "
                "(lo=%g hi=%g length=%g ranges=%s)", self.lo, self.hi, self.length,
                self.ranges)


class Policy:
    """Per-agent switching locations and dwell durations; the decision variable.

    ``switches[n][k]`` is the (k+1)-th location where agent n stops; indices
    are 1-based in events and file formats, 0-based in these arrays.
    """

    __slots__ = ("switches", "dwells")

    def __init__(self, switches, dwells):
        self.switches = [np.asarray(t, dtype=float).copy() for t in switches]
        self.dwells = [np.asarray(w, dtype=float).copy() for w in dwells]
        if len(self.switches) != len(self.dwells):
            raise PolicyError("switches and dwells must cover the same agents")
        for th, w in zip(self.switches, self.dwells):
            if th.shape != w.shape:
                raise PolicyError("per-agent switches and dwells must have equal length")

    @property
    def n_agents(self) -> int:
        return len(self.switches)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(len(t) for t in self.switches)

    @property
    def n_params(self) -> int:
        return 2 * sum(self.dims)

    def copy(self) -> "Policy":
        return Policy(self.switches, self.dwells)

    def as_vector(self) -> np.ndarray:
        """Flatten to [theta_1, w_1, theta_2, w_2, ...] agent blocks."""
        parts = []
        for th, w in zip(self.switches, self.dwells):
            parts.append(th)
            parts.append(w)
        return np.concatenate(parts) if parts else np.zeros(0)

    @staticmethod
    def from_vector(vec: np.ndarray, dims) -> "Policy":
        switches, dwells, off = [], [], 0
        for g in dims:
            switches.append(vec[off:off + g])
            dwells.append(vec[off + g:off + 2 * g])
            off += 2 * g
        return Policy(switches, dwells)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Policy(dims={self.dims})"


def validate_policy(config: MissionConfig, policy: Policy, tol: float = 1e-9) -> None:
    """Check bounds, nonnegativity and the alternating ordering chain.

    The chain anchors at the start position: odd-index switches must not lie
    left of their predecessor, even-index ones not right of it.
    """
    if policy.n_agents != config.n_agents:
        raise PolicyError(
            f"policy covers {policy.n_agents} agents, config has {config.n_agents}")
    for n, (th, w) in enumerate(zip(policy.switches, policy.dwells)):
        if np.any(w < -tol):
            raise PolicyError(f"agent {n}: dwell times must be nonnegative, got {w}")
        if len(th) == 0:
            continue
        if np.any(th < config.lo - tol) or np.any(th > config.hi + tol):
            raise PolicyError(
                f"agent {n}: switching locations must lie in "
                f"[{config.lo}, {config.hi}], got {th}")
        prev = config.starts[n]
        for k, t in enumerate(th):
            xi = k + 1
            if xi % 2 == 1 and t < prev - tol:
                raise PolicyError(
                    f"agent {n}: switch {xi} at {t} lies left of predecessor {prev}")
            if xi % 2 == 0 and t > prev + tol:
                raise PolicyError(
                    f"agent {n}: switch {xi} at {t} lies right of predecessor {prev}")
            prev = t
