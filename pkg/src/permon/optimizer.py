"""Projected gradient descent over switching locations and dwell times.

Implements the half-spacing initialization with its switch-count ceiling,
feasibility projection, Armijo or constant step sizes, termination on the
projected-gradient norm, and trimming of the final policy to the reachable
prefix.
"""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .ipa import propagate
from .model import MissionConfig, Policy
from .simulator import NumericSettings, DEFAULT_SETTINGS, Trajectory, simulate
from .stochastic import sample_rate_process, simulate_with_process

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ArmijoStep:
    """Backtracking line search: eta shrinks by beta until the candidate cost
    drops by at least gamma * eta * |projected gradient|^2."""

    beta: float = 0.5
    gamma: float = 1e-4
    initial: float = 1.0
    floor: float = 1e-14

    def __post_init__(self):
        if not (0.0 < self.beta < 1.0) or not (0.0 < self.gamma < 1.0):
            raise ConfigError("Armijo parameters must lie in (0, 1)")
        if self.initial <= 0.0:
            raise ConfigError("initial step size must be positive")


@dataclass(frozen=True)
class ConstantStep:
    """Fixed step sizes, applied separately to switch and dwell components."""

    eta_switch: float = 0.05
    eta_dwell: float = 0.05

    def __post_init__(self):
        if self.eta_switch <= 0.0 or self.eta_dwell <= 0.0:
            raise ConfigError("constant step sizes must be positive")


@dataclass(frozen=True)
class OptimizerSettings:
    sigma: float = 5.0            # initial half-spacing of switch pairs
    epsilon: float = 2e-10        # projected-gradient norm threshold
    max_iters: int = 300
    step: object = field(default_factory=ArmijoStep)
    seed: int = 0

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ConfigError("sigma must be positive")
        if self.epsilon <= 0.0:
            raise ConfigError("epsilon must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")


@dataclass
class IterateRecord:
    iteration: int
    cost: float
    grad_norm: float
    eta: float
    policy: Policy


@dataclass
class OptimizationRun:
    history: list          # IterateRecord per iteration
    final_policy: Policy
    trimmed_policy: Policy
    reached_counts: list   # zeta_n per agent
    status: str            # converged | max_iters | stalled
    final_cost: float
    final_grad_norm: float
    final_trajectory: Trajectory
    runtime: float


def initialize(config: MissionConfig, sigma: float) -> Policy:
    """Half-spacing start: switch pairs straddle each agent's slice center
    and the count is the ceiling needed to fill the horizon at zero dwell."""
    if sigma <= 0.0:
        raise ConfigError("sigma must be positive")
    n = config.n_agents
    switches, dwells = [], []
    for k in range(n):
        center = config.lo + (2 * k + 1) * (config.hi - config.lo) / (2 * n)
        up = center + sigma
        down = center - sigma
        if up > config.hi or down < config.lo:
            log.warning("sigma=%g overflows [%g, %g] around center %g; clipping",
                        sigma, config.lo, config.hi, center)
            up, down = min(up, config.hi), max(down, config.lo)
        first = max(up, config.starts[k])
        gamma = int(np.ceil((config.horizon - first + config.starts[k])
                            / (2.0 * sigma)))
        gamma = max(gamma, 1)
        th = np.where(np.arange(1, gamma + 1) % 2 == 1, up, down)
        switches.append(th)
        dwells.append(np.zeros(gamma))
    return project(Policy(switches, dwells), config)


def project(policy: Policy, config: MissionConfig) -> Policy:
    """Clamp into bounds and restore the alternating ordering with one
    forward pass anchored at the start position.  Idempotent."""
    out = policy.copy()
    for n in range(out.n_agents):
        th = np.clip(out.switches[n], config.lo, config.hi)
        prev = float(config.starts[n])
        for k in range(len(th)):
            if (k + 1) % 2 == 1:
                th[k] = max(th[k], prev)
            else:
                th[k] = min(th[k], prev)
            prev = th[k]
        out.switches[n] = th
        out.dwells[n] = np.maximum(out.dwells[n], 0.0)
    return out


def projected_gradient(policy: Policy, grad: np.ndarray,
                       config: MissionConfig, tol: float = 1e-12) -> np.ndarray:
    """Zero every gradient component whose descent step would leave the
    feasible set through an active bound or ordering constraint."""
    g = grad.copy()
    off = 0
    for n in range(policy.n_agents):
        th = policy.switches[n]
        w = policy.dwells[n]
        gdim = len(th)
        gth = g[off:off + gdim]
        gw = g[off + gdim:off + 2 * gdim]
        for k in range(gdim):
            if th[k] <= config.lo + tol and gth[k] > 0.0:
                gth[k] = 0.0
            if th[k] >= config.hi - tol and gth[k] < 0.0:
                gth[k] = 0.0
            if w[k] <= tol and gw[k] > 0.0:
                gw[k] = 0.0
        for k in range(gdim):
            prev = config.starts[n] if k == 0 else th[k - 1]
            if abs(th[k] - prev) > tol:
                continue
            xi = k + 1
            if k == 0:
                # anchored at the fixed start position
                if (xi % 2 == 1 and gth[0] > 0.0) or (xi % 2 == 0 and gth[0] < 0.0):
                    gth[0] = 0.0
                continue
            # moving along -g must not break th[k] >= th[k-1] (xi odd) or
            # th[k] <= th[k-1] (xi even); zero the offending pair
            if xi % 2 == 1 and gth[k] > gth[k - 1]:
                gth[k] = gth[k - 1] = 0.0
            elif xi % 2 == 0 and gth[k] < gth[k - 1]:
                gth[k] = gth[k - 1] = 0.0
        off += 2 * gdim
    return g


def step(policy: Policy, cost: float, grad: np.ndarray, settings,
         config: MissionConfig, evaluate, eta_start: float | None = None):
    """One descent update.  ``evaluate(policy) -> (cost, payload)``.

    Returns (new policy, eta, new cost, payload, stalled).  Under Armijo the
    step is backtracked until sufficient decrease; constant mode applies the
    fixed step unconditionally.
    """
    mode = settings.step
    vec = policy.as_vector()
    dims = policy.dims
    if isinstance(mode, ConstantStep):
        scale = np.empty_like(vec)
        off = 0
        for g in dims:
            scale[off:off + g] = mode.eta_switch
            scale[off + g:off + 2 * g] = mode.eta_dwell
            off += 2 * g
        cand = project(Policy.from_vector(vec - scale * grad, dims), config)
        # acceptance is unconditional; the caller re-simulates when it needs
        # the candidate's cost
        return cand, mode.eta_switch, np.nan, None, False
    gproj = projected_gradient(policy, grad, config)
    gnorm2 = float(gproj @ gproj)
    eta = mode.initial if eta_start is None else min(eta_start, mode.initial)
    while eta >= mode.floor:
        cand = project(Policy.from_vector(vec - eta * grad, dims), config)
        new_cost, payload = evaluate(cand)
        if new_cost <= cost - mode.gamma * eta * gnorm2:
            return cand, eta, new_cost, payload, False
        eta *= mode.beta
    return policy, 0.0, cost, None, True


def trim(policy: Policy, trajectory: Trajectory) -> tuple[Policy, list]:
    """Drop the unreachable suffix of every agent's parameter vector.

    The trimmed policy reproduces the identical trajectory: unreached
    switching locations generate no motion and carry zero gradients.
    """
    switches, dwells, counts = [], [], []
    for n, prof in enumerate(trajectory.profiles):
        reached = prof.reached
        zeta = int(np.max(np.nonzero(reached)[0]) + 1) if reached.any() else 0
        switches.append(policy.switches[n][:zeta])
        dwells.append(policy.dwells[n][:zeta])
        counts.append(zeta)
    return Policy(switches, dwells), counts


def optimize(config: MissionConfig, settings: OptimizerSettings,
             warm_start: Policy | None = None,
             stochastic=None,
             sim_settings: NumericSettings = DEFAULT_SETTINGS,
             progress=None) -> OptimizationRun:
    """Run the full descent loop: simulate, propagate, update, repeat.

    ``stochastic`` optionally carries (mu, lo, hi); each iteration then
    resamples the growth-rate processes from a seed derived from
    ``settings.seed`` and the iteration number, and the gradient acts as a
    stochastic-gradient estimate.
    """
    t_start = _time.perf_counter()
    policy = project(warm_start, config) if warm_start is not None \
        else initialize(config, settings.sigma)
    sensing = config.sensing()

    def make_process(iteration: int):
        if stochastic is None:
            return None
        seed = int(np.random.SeedSequence((settings.seed, iteration))
                   .generate_state(1)[0])
        return sample_rate_process(seed, config.horizon, stochastic.mu,
                                   stochastic.lo, stochastic.hi,
                                   config.n_points, decay=config.decay)

    def run_sim(pol: Policy, process) -> Trajectory:
        if process is not None:
            return simulate_with_process(config, pol, process, sim_settings)
        return simulate(config, pol, sim_settings)

    history: list[IterateRecord] = []
    status = "max_iters"
    eta_prev: float | None = None
    trajectory = None
    for it in range(settings.max_iters):
        process = make_process(it)
        if trajectory is None or process is not None:
            trajectory = run_sim(policy, process)
        cost = trajectory.cost
        sens = propagate(trajectory, sensing, policy, record_history=False)
        grad = sens.grad
        if not np.isfinite(cost) or not np.all(np.isfinite(grad)):
            raise NumericError(
                f"non-finite cost or gradient at iteration {it}: J={cost}")
        gnorm = float(np.linalg.norm(projected_gradient(policy, grad, config)))
        if gnorm < settings.epsilon:
            history.append(IterateRecord(it, cost, gnorm, 0.0, policy.copy()))
            status = "converged"
            break

        def evaluate(cand: Policy):
            t = run_sim(cand, process)
            return t.cost, t

        eta_start = None
        if isinstance(settings.step, ArmijoStep) and eta_prev is not None:
            eta_start = eta_prev / settings.step.beta
        new_policy, eta, new_cost, payload, stalled = step(
            policy, cost, grad, settings, config, evaluate, eta_start)
        history.append(IterateRecord(it, cost, gnorm, eta, policy.copy()))
        if progress is not None:
            progress(it, cost, gnorm, eta)
        if stalled:
            status = "stalled"
            break
        policy = new_policy
        eta_prev = eta if eta > 0.0 else None
        trajectory = payload if process is None else None

    if trajectory is None:
        trajectory = run_sim(policy, make_process(len(history)))
    trimmed, counts = trim(policy, trajectory)
    final_sens = propagate(trajectory, sensing, policy, record_history=False)
    final_gnorm = float(np.linalg.norm(
        projected_gradient(policy, final_sens.grad, config)))
    return OptimizationRun(
        history=history, final_policy=policy, trimmed_policy=trimmed,
        reached_counts=counts, status=status, final_cost=trajectory.cost,
        final_grad_norm=final_gnorm, final_trajectory=trajectory,
        runtime=_time.perf_counter() - t_start)
