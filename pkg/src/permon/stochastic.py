"""Piecewise-constant random growth-rate processes.

Each sampling point gets an independent renewal process: a value drawn
uniformly from [lo, hi) held for an exponentially distributed time, then
redrawn.  Process jumps are exogenous: they join the simulator's breakpoint
grid but trigger no sensitivity jumps, so the event-driven gradient doubles
as a stochastic-gradient estimate without any change.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import MissionConfig, Policy
from .simulator import NumericSettings, DEFAULT_SETTINGS, Trajectory, simulate

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RateProcess:
    """Held growth-rate values per sampling point.

    ``jumps[i]`` are the strictly increasing redraw times of point i
    (excluding 0); ``values[i]`` has one more entry than ``jumps[i]`` and
    holds the value on each inter-jump interval, starting at t = 0.
    """

    jumps: list
    values: list
    mu: float
    lo: float
    hi: float
    seed: int

    @property
    def n_points(self) -> int:
        return len(self.values)

    def value_at(self, i: int, t: float) -> float:
        k = int(np.searchsorted(self.jumps[i], t, side="right"))
        return float(self.values[i][k])

    def values_at(self, t: float) -> np.ndarray:
        return np.array([self.value_at(i, t) for i in range(self.n_points)])

    def values_on_grid(self, i: int, t: np.ndarray) -> np.ndarray:
        ks = np.searchsorted(self.jumps[i], t, side="right")
        return self.values[i][ks]

    def change_times(self, horizon: float) -> np.ndarray:
        """Jump times at which the held value actually changes, for the grid.

        Jumps that redraw the identical value are dropped, so a degenerate
        lo == hi process adds no breakpoints and reproduces the deterministic
        path bit for bit.
        """
        out = []
        for i in range(self.n_points):
            v = self.values[i]
            changed = v[1:] != v[:-1]
            out.extend(self.jumps[i][changed])
        return np.unique([t for t in out if 0.0 < t < horizon])

    def integrals(self, horizon: float) -> np.ndarray:
        """Per-point integral of the held value over [0, horizon]."""
        out = np.zeros(self.n_points)
        for i in range(self.n_points):
            knots = np.concatenate(([0.0], np.clip(self.jumps[i], 0.0, horizon),
                                    [horizon]))
            widths = np.diff(knots)
            out[i] = float(np.sum(widths * self.values[i][:len(widths)]))
        return out


def sample_rate_process(seed: int, horizon: float, mu: float, lo: float,
                        hi: float, n_points: int,
                        decay: float | None = None) -> RateProcess:
    """Draw independent renewal processes for every sampling point.

    Holding times are exponential with mean ``mu``; values are uniform on the
    half-open interval [lo, hi) (lo == hi degenerates to a constant process).
    Deterministic given the seed.
    """
    if mu <= 0.0:
        raise ConfigError("mean holding time must be positive")
    if lo <= 0.0 or hi < lo:
        raise ConfigError(f"need 0 < lo <= hi, got lo={lo} hi={hi}")
    if decay is not None and hi >= decay:
        raise ConfigError(
            f"rate range upper bound {hi} must stay below the decay rate {decay}")
    rng = np.random.default_rng(seed)
    jumps, values = [], []
    for _ in range(n_points):
        ts, vs = [], [float(rng.uniform(lo, hi)) if hi > lo else float(lo)]
        t = float(rng.exponential(mu))
        while t < horizon:
            ts.append(t)
            vs.append(float(rng.uniform(lo, hi)) if hi > lo else float(lo))
            t += float(rng.exponential(mu))
        jumps.append(np.asarray(ts))
        values.append(np.asarray(vs))
    return RateProcess(jumps=jumps, values=values, mu=float(mu), lo=float(lo),
                       hi=float(hi), seed=int(seed))


def simulate_with_process(config: MissionConfig, policy: Policy,
                          process: RateProcess,
                          settings: NumericSettings = DEFAULT_SETTINGS) -> Trajectory:
    """Exact simulation with piecewise-constant growth rates.

    Identical to the deterministic simulator except that the process's
    value-change times join the breakpoint grid; a constant process is
    bit-identical to the deterministic path.
    """
    if process.n_points != config.n_points:
        raise ConfigError(
            f"process covers {process.n_points} points, config has {config.n_points}")
    if process.hi >= config.decay:
        raise ConfigError(
            f"process range upper bound {process.hi} must stay below the "
            f"decay rate {config.decay}")
    return simulate(config, policy, settings, process=process)
