import logging

import numpy as np
import pytest

from permon import MissionConfig, Policy

# Coincidence warnings are expected in a few deliberately degenerate tests;
# keep the log quiet unless a test opts back in.
logging.getLogger("permon").setLevel(logging.ERROR)


@pytest.fixture
def single_point_config():
    """One agent, one sampling point: every event time has a closed form."""
    return MissionConfig.create(length=20.0, decay=3.0, horizon=30.0,
                                agents=[(0.0, 4.0)], points=[10.0],
                                growth=0.1, r0=4.0)


@pytest.fixture
def mini_config():
    """Small but fully featured mission for fast end-to-end tests."""
    return MissionConfig.create(length=10.0, decay=3.0, horizon=40.0,
                                agents=[(0.0, 2.5)],
                                points=[1.0, 3.0, 5.0, 7.0, 9.0],
                                growth=0.1, r0=4.0)


@pytest.fixture
def benchmark_one_agent():
    """The benchmark one-agent mission (unit-spaced points over [0, 20])."""
    return MissionConfig.create(length=20.0, decay=3.0, horizon=400.0,
                                agents=[(0.0, 4.0)],
                                points=list(np.linspace(0.0, 20.0, 21)),
                                growth=0.1, r0=4.0)


def random_feasible_policy(config: MissionConfig, rng: np.random.Generator,
                           n_switches: int | None = None,
                           margin: float = 0.4, gap: float = 0.3,
                           dwell_lo: float = 0.05, dwell_hi: float = 2.5) -> Policy:
    """Strictly feasible policy with comfortable margins from every constraint."""
    switches, dwells = [], []
    for n in range(config.n_agents):
        gamma = int(n_switches if n_switches is not None else rng.integers(3, 6))
        lo, hi = config.lo + margin, config.hi - margin
        th = []
        prev = float(config.starts[n])
        for k in range(gamma):
            xi = k + 1
            if xi % 2 == 1:
                low = max(prev + gap, lo)
                # no room that side: repeating the predecessor stays feasible
                t = rng.uniform(low, hi) if low < hi else prev
            else:
                high = min(prev - gap, hi)
                t = rng.uniform(lo, high) if lo < high else prev
            th.append(float(t))
            prev = t
        switches.append(th)
        dwells.append(rng.uniform(dwell_lo, dwell_hi, size=gamma))
    return Policy(switches, dwells)
