"""Event-driven sensitivity propagation and exact gradient accumulation.

Walks an observed trajectory's event log once and carries, jointly for every
policy parameter, the position sensitivities (piecewise constant between
events) and the uncertainty sensitivities (piecewise polynomial).  The
gradient of the time-averaged cost falls out as an exact integral of the
uncertainty sensitivities.

By construction this module never sees the growth rates: the only inputs are
the event log, the motion profile, the decay rate, and the sensing ranges.
Growth influences the result solely through the observed event times, which
is what makes the same code a valid stochastic-gradient estimator when the
growth rates are random.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .errors import PermonError
from .model import Policy, SensingInfo
from .simulator import (EventKind, Trajectory, miss_product, poly_eval,
                        poly_int)

log = logging.getLogger(__name__)


@dataclass
class ParamLayout:
    """Flat parameter vector layout: per agent, switch block then dwell block."""

    dims: tuple[int, ...]

    def __post_init__(self):
        offs = []
        off = 0
        for g in self.dims:
            offs.append(off)
            off += 2 * g
        self.offsets = offs
        self.size = off

    def switch_slice(self, n: int) -> slice:
        return slice(self.offsets[n], self.offsets[n] + self.dims[n])

    def dwell_slice(self, n: int) -> slice:
        return slice(self.offsets[n] + self.dims[n], self.offsets[n] + 2 * self.dims[n])

    def labels(self) -> list[tuple[str, int, int]]:
        """(kind, agent, xi) for every flat-vector position, xi 1-based."""
        out = []
        for n, g in enumerate(self.dims):
            out.extend([("switch", n, xi) for xi in range(1, g + 1)])
            out.extend([("dwell", n, xi) for xi in range(1, g + 1)])
        return out


class PropagationState:
    """Mutable carrier for the sensitivity rows during an event walk."""

    def __init__(self, dims, n_points: int):
        self.layout = ParamLayout(tuple(dims))
        self.ds_switch = [np.zeros(g) for g in dims]
        self.ds_dwell = [np.zeros(g) for g in dims]
        self.dr = np.zeros((n_points, self.layout.size))
        self.grad = np.zeros(self.layout.size)
        self.reset_log: list[tuple[float, int, float, float]] = []


def apply_arrival(state: PropagationState, agent: int, xi: int) -> None:
    """Agent comes to rest at its xi-th switching location (1-based).

    The resting position tracks only the location just reached, so the switch
    row collapses to the unit vector at xi and every dwell sensitivity up to
    xi is wiped.
    """
    row = state.ds_switch[agent]
    row[:] = 0.0
    row[xi - 1] = 1.0
    state.ds_dwell[agent][:xi] = 0.0


def apply_departure(state: PropagationState, agent: int, xi: int, u_out: int) -> None:
    """Agent leaves its xi-th switching location moving in direction u_out.

    The departure time shifts with every earlier parameter, so position picks
    up +-2 per earlier switch (sign set by index parity and direction), +1
    for the location itself, and -u_out per elapsed dwell.
    """
    if u_out == 0:
        raise PermonError("departure with zero outgoing slope")
    row = state.ds_switch[agent]
    row[xi - 1] += 1.0
    if xi > 1:
        j = np.arange(1, xi)
        row[:xi - 1] += 2.0 * u_out * np.where(j % 2 == 1, -1.0, 1.0)
    state.ds_dwell[agent][:xi] = -float(u_out)


def apply_wall(state: PropagationState, agent: int) -> None:
    """Agent parks at a feasible-interval bound: position is pinned, every
    sensitivity row goes to zero."""
    state.ds_switch[agent][:] = 0.0
    state.ds_dwell[agent][:] = 0.0


def apply_boundary_hit(state: PropagationState, point: int, time: float = np.nan) -> None:
    """Uncertainty of ``point`` reached its floor: its sensitivity row resets
    to zero for every parameter, regardless of prior value."""
    before = float(np.abs(state.dr[point]).max()) if state.dr.shape[1] else 0.0
    state.dr[point, :] = 0.0
    after = float(np.abs(state.dr[point]).max()) if state.dr.shape[1] else 0.0
    state.reset_log.append((time, point, before, after))


def segment_sensitivity_increment(q_minus, zeta: float, sense_range: float,
                                  decay: float, ds_value: float,
                                  duration: float, on_boundary: bool):
    """Contribution of one event-free segment to one point's sensitivity row.

    Returns ``(increment, integral)``: the change of dR over the segment and
    the integral of the dR excursion above its entry value.  ``q_minus`` holds
    ascending coefficients of the other-agents miss product; ``zeta`` is the
    sign of dp/ds for the owning agent (0 out of range).  On floor arcs both
    results are exactly zero.
    """
    if on_boundary or zeta == 0.0 or ds_value == 0.0:
        return 0.0, 0.0
    c = -decay * zeta / sense_range * ds_value
    q_big = poly_int(np.asarray(q_minus, dtype=float))
    increment = c * float(poly_eval(q_big, duration))
    integral = c * float(poly_eval(poly_int(q_big), duration))
    return increment, integral


@dataclass
class SensitivityState:
    """Final sensitivities and the exact cost gradient.

    ``grad`` is the flat gradient in :class:`ParamLayout` order;
    ``grad_switch`` / ``grad_dwell`` are per-agent views of the same data.
    ``pos_history`` records the piecewise-constant position sensitivities as
    (t0, t1, ds_switch per agent, ds_dwell per agent) tuples.
    """

    layout: ParamLayout
    grad: np.ndarray
    grad_switch: list[np.ndarray]
    grad_dwell: list[np.ndarray]
    dr_final: np.ndarray
    pos_history: list
    reset_log: list
    degraded: bool

    def flat(self) -> np.ndarray:
        return self.grad

    def norm(self) -> float:
        return float(np.linalg.norm(self.grad))


def propagate(trajectory: Trajectory, sensing: SensingInfo, policy: Policy,
              record_history: bool = True) -> SensitivityState:
    """Propagate sensitivities across the event log and accumulate the gradient.

    ``sensing`` carries only the geometry (sampling points, decay rate,
    sensing ranges); growth rates are neither accepted nor read.  A trajectory
    whose log contains merged coincident events yields a result flagged
    ``degraded``.
    """
    if not isinstance(sensing, SensingInfo):
        raise TypeError("propagate expects SensingInfo; use config.sensing()")
    dims = policy.dims
    n_agents = len(dims)
    m = trajectory.n_points
    horizon = trajectory.horizon
    state = PropagationState(dims, m)
    layout = state.layout
    flags = trajectory.initial_boundary.copy()
    pos_history: list = []

    decay = sensing.decay
    ranges = sensing.ranges
    single = n_agents == 1

    # Between motion and floor-hit events the position sensitivities and the
    # uncertainty-sensitivity rows evolve affinely, so the expensive (points
    # x parameters) updates are accumulated per run and flushed at events.
    dr_colsum = np.zeros(layout.size)
    run_start = 0.0
    run_width = 0.0                      # total elapsed width in the run
    run_coef = np.zeros(n_agents)        # sum_j width_j * cumw_{<j, n}
    run_a = np.zeros(n_agents)           # sum_j a_{j, n}
    run_wsum = [np.zeros(m) for _ in range(n_agents)]
    run_cumw = np.zeros(n_agents)        # running sum of wvec totals

    def advance(t0: float, t1: float) -> None:
        """Accumulate one kink-free sub-interval into the current run."""
        nonlocal run_width
        width = t1 - t0
        if width <= 0.0:
            return
        run_width += width
        geom = None
        for n in range(n_agents):
            if not (state.ds_switch[n].any() or state.ds_dwell[n].any()):
                continue
            run_coef[n] += width * run_cumw[n]
            if geom is None:
                geom = trajectory.geometry_at(t0, t1)
            cvec = -decay / ranges[n] * geom.zeta[n]
            cvec[flags] = 0.0
            if not cvec.any():
                continue
            if single:
                # the other-agents miss product is identically 1
                a = float(cvec.sum()) * (0.5 * width * width)
                wvec = cvec * width
            elif n_agents == 2:
                # one other agent: the miss product is a single affine factor
                other = 1 - n
                a0 = 1.0 - geom.p0[other]
                a1 = -geom.dp[other]
                wvec = cvec * (width * (a0 + 0.5 * width * a1))
                a = float(cvec @ (width * width * (0.5 * a0 + width * a1 / 6.0)))
            else:
                qm = miss_product(geom, skip=n)          # (M, N)
                q_big = poly_int(qm)                     # (M, N+1), zero constant
                a = float(cvec @ poly_eval(poly_int(q_big), width))
                wvec = cvec * poly_eval(q_big, width)
            run_a[n] += a
            run_wsum[n] += wvec
            run_cumw[n] += float(wvec.sum())

    def flush(t_end: float) -> None:
        """Apply the accumulated run to the gradient and the dR matrix."""
        nonlocal run_start, run_width, dr_colsum
        if run_width > 0.0:
            state.grad += (run_width / horizon) * dr_colsum
            touched = False
            for n in range(n_agents):
                coef = (run_a[n] + run_coef[n]) / horizon
                ds_th = state.ds_switch[n]
                ds_w = state.ds_dwell[n]
                if coef != 0.0:
                    state.grad[layout.switch_slice(n)] += coef * ds_th
                    state.grad[layout.dwell_slice(n)] += coef * ds_w
                if run_cumw[n] != 0.0 or run_wsum[n].any():
                    state.dr[:, layout.switch_slice(n)] += \
                        run_wsum[n][:, None] * ds_th[None, :]
                    state.dr[:, layout.dwell_slice(n)] += \
                        run_wsum[n][:, None] * ds_w[None, :]
                    touched = True
            if record_history:
                pos_history.append((run_start, t_end,
                                    [row.copy() for row in state.ds_switch],
                                    [row.copy() for row in state.ds_dwell]))
            if touched:
                dr_colsum = state.dr.sum(axis=0)
        run_start = t_end
        run_width = 0.0
        run_coef[:] = 0.0
        run_a[:] = 0.0
        run_cumw[:] = 0.0
        for w in run_wsum:
            w[:] = 0.0

    motion = (EventKind.ARRIVAL, EventKind.DEPARTURE, EventKind.WALL)
    t_cur = 0.0
    for t_evt, group in itertools.groupby(trajectory.events, key=lambda e: e.time):
        if t_evt > horizon:
            break
        group = list(group)
        advance(t_cur, min(t_evt, horizon))
        t_cur = max(t_cur, min(t_evt, horizon))
        if any(e.kind in motion or e.kind == EventKind.BOUNDARY_HIT
               for e in group):
            flush(t_cur)
        recount = False
        for e in group:
            if e.kind == EventKind.ARRIVAL:
                apply_arrival(state, e.agent, e.xi)
            elif e.kind == EventKind.DEPARTURE:
                apply_departure(state, e.agent, e.xi, e.u_out)
            elif e.kind == EventKind.WALL:
                apply_wall(state, e.agent)
            elif e.kind == EventKind.BOUNDARY_HIT:
                apply_boundary_hit(state, e.point, e.time)
                flags[e.point] = True
                recount = True
            elif e.kind == EventKind.BOUNDARY_EXIT:
                # Net growth crosses zero here, so the dynamics are continuous
                # and no sensitivity jumps; the floor arc simply ends.
                flags[e.point] = False
        if recount:
            dr_colsum = state.dr.sum(axis=0)
    advance(t_cur, horizon)
    flush(horizon)

    if trajectory.degraded:
        log.warning("gradient computed from a trajectory with merged "
                    "coincident events; treat as degraded")

    grad_switch = [state.grad[layout.switch_slice(n)] for n in range(len(dims))]
    grad_dwell = [state.grad[layout.dwell_slice(n)] for n in range(len(dims))]
    return SensitivityState(
        layout=layout, grad=state.grad, grad_switch=grad_switch,
        grad_dwell=grad_dwell, dr_final=state.dr, pos_history=pos_history,
        reset_log=state.reset_log, degraded=trajectory.degraded)
