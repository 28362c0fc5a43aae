"""Exact event-driven simulation of the patrol / uncertainty dynamics.

Agent motion is piecewise linear at unit speed with dwells, so between
breakpoints every per-agent detection probability is affine in time and each
uncertainty level evolves as a low-degree polynomial.  The simulator
integrates those polynomials exactly, locates floor hits (R reaching zero)
and floor exits (net growth turning positive on a floor arc) by root
localization, and records a complete ordered event log.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import NumericError
from .model import MissionConfig, Policy, validate_policy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NumericSettings:
    """All tolerances in one place.

    merge_tol:  events closer than this are merged and processed in a fixed
                order; a warning is attached when the merge degrades gradient
                validity.
    root_tol:   width to which event-time brackets are bisected before the
                Newton polish.
    probe_floor: minimum number of Chebyshev probes used to bracket roots.
    """

    merge_tol: float = 1e-9
    root_tol: float = 1e-12
    rate_tol: float = 1e-12       # net-rate threshold for floor entry/exit
    probe_floor: int = 8
    max_splits: int = 64          # floor hit/exit alternations per interval


DEFAULT_SETTINGS = NumericSettings()


class EventKind(IntEnum):
    """Event classes; the numeric value is the processing priority inside a
    merged group (motion events are additionally ordered by per-agent
    sequence so that zero-dwell composites replay in the order they occur)."""

    KINK = 0            # agent crosses alpha - r, alpha, or alpha + r
    ARRIVAL = 1         # slope +-1 -> 0 at a switching location
    DEPARTURE = 2       # slope 0 -> +-1 leaving a switching location
    WALL = 3            # agent out of switching locations parks at lo/hi
    BOUNDARY_EXIT = 4   # net growth crosses zero upward while R_i = 0
    BOUNDARY_HIT = 5    # R_i reaches zero with negative net growth


@dataclass(frozen=True)
class Event:
    time: float
    kind: EventKind
    agent: int = -1       # motion/kink events
    xi: int = 0           # 1-based switching index (motion events)
    point: int = -1       # kink / floor events
    u_out: int = 0        # departure direction
    seq: int = -1         # per-agent motion order, for in-group ordering

    def subject(self) -> str:
        if self.kind in (EventKind.BOUNDARY_HIT, EventKind.BOUNDARY_EXIT):
            return f"point={self.point}"
        if self.kind == EventKind.KINK:
            return f"agent={self.agent} point={self.point}"
        if self.kind == EventKind.WALL:
            return f"agent={self.agent}"
        return f"agent={self.agent} xi={self.xi}"


@dataclass(frozen=True)
class MotionSegment:
    t0: float
    t1: float
    x0: float
    u: int                # -1, 0, +1

    def position(self, t):
        return self.x0 + self.u * (np.asarray(t) - self.t0)


class AgentProfile:
    """One agent's motion: segments tiling [0, T] plus switch timing."""

    def __init__(self, segments, arrivals, departures, reached, events):
        self.segments: list[MotionSegment] = segments
        self.arrivals: np.ndarray = arrivals        # +inf when unreached
        self.departures: np.ndarray = departures    # +inf when not left
        self.reached: np.ndarray = reached
        self.events: list[Event] = events           # time-ordered motion events
        self._ends = np.array([s.t1 for s in segments])

    def segment_at(self, t: float) -> MotionSegment:
        """Segment containing t; boundaries resolve to the later segment."""
        k = int(np.searchsorted(self._ends, t, side="right"))
        if k >= len(self.segments):
            k = len(self.segments) - 1
        return self.segments[k]

    def position(self, t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return float(self.segment_at(float(t)).position(t))
        ks = np.minimum(np.searchsorted(self._ends, t, side="right"),
                        len(self.segments) - 1)
        t0 = np.array([self.segments[k].t0 for k in ks])
        x0 = np.array([self.segments[k].x0 for k in ks])
        u = np.array([self.segments[k].u for k in ks])
        return x0 + u * (t - t0)

    def slope(self, t: float) -> int:
        return self.segment_at(float(t)).u


def _direction(xi: int) -> int:
    """Travel direction toward the xi-th switching location (1-based)."""
    return 1 if xi % 2 == 1 else -1


def build_profile(config: MissionConfig, policy: Policy,
                  settings: NumericSettings = DEFAULT_SETTINGS) -> list[AgentProfile]:
    """Turn a feasible policy into per-agent motion profiles.

    Motion starts in the +1 direction, alternates after every switching
    location, and dwells there for the prescribed time.  An agent that runs
    out of switching locations before the horizon keeps moving until it
    reaches the nearest feasible bound and parks there (a WALL event).
    Switching locations not reached within the horizon produce no events.
    """
    validate_policy(config, policy)
    T = config.horizon
    profiles = []
    for n in range(config.n_agents):
        th, w = policy.switches[n], policy.dwells[n]
        segments: list[MotionSegment] = []
        events: list[Event] = []
        gamma = len(th)
        arrivals = np.full(gamma, np.inf)
        departures = np.full(gamma, np.inf)
        reached = np.zeros(gamma, dtype=bool)
        t, x = 0.0, float(config.starts[n])
        seq = 0
        exhausted_dir = 1
        done = False
        for k in range(gamma):
            xi = k + 1
            u = _direction(xi)
            travel = abs(th[k] - x)
            t_arr = t + travel
            if t_arr > T:
                segments.append(MotionSegment(t, T, x, u))
                done = True
                break
            if travel > 0.0:
                segments.append(MotionSegment(t, t_arr, x, u))
            x = float(th[k])
            arrivals[k] = t_arr
            reached[k] = True
            events.append(Event(t_arr, EventKind.ARRIVAL, agent=n, xi=xi, seq=seq))
            seq += 1
            t_dep = t_arr + float(w[k])
            if t_dep >= T:
                if t_arr < T:
                    segments.append(MotionSegment(t_arr, T, x, 0))
                done = True
                break
            if t_dep > t_arr:
                segments.append(MotionSegment(t_arr, t_dep, x, 0))
            departures[k] = t_dep
            u_out = -_direction(xi)
            events.append(Event(t_dep, EventKind.DEPARTURE, agent=n, xi=xi,
                                u_out=u_out, seq=seq))
            seq += 1
            t = t_dep
            exhausted_dir = u_out
        if not done:
            # Out of switching locations: ride to the nearest bound and park.
            wall = config.hi if exhausted_dir > 0 else config.lo
            t_wall = t + abs(wall - x)
            if t_wall >= T:
                if t < T:
                    segments.append(MotionSegment(t, T, x, exhausted_dir))
            else:
                if t_wall > t:
                    segments.append(MotionSegment(t, t_wall, x, exhausted_dir))
                segments.append(MotionSegment(t_wall, T, wall, 0))
                events.append(Event(t_wall, EventKind.WALL, agent=n, seq=seq))
                seq += 1
        if not segments:
            segments.append(MotionSegment(0.0, T, x, 0))
        profiles.append(AgentProfile(segments, arrivals, departures, reached, events))
    return profiles


def _kink_locations(config: MissionConfig, n: int) -> tuple[np.ndarray, list]:
    """Sorted distinct positions where agent n's slope toward any point kinks,
    with the (point, label) pairs stacked on each location."""
    r = config.ranges[n]
    raw = []
    for i, a in enumerate(config.points):
        raw.append((a - r, i, "enter"))
        raw.append((a, i, "center"))
        raw.append((a + r, i, "leave"))
    raw.sort(key=lambda z: z[0])
    locs, groups = [], []
    for x, i, lab in raw:
        if locs and abs(x - locs[-1]) <= 1e-12 * max(1.0, abs(x)):
            groups[-1].append((i, lab))
        else:
            locs.append(x)
            groups.append([(i, lab)])
    return np.asarray(locs), groups


def segment_breakpoints(profiles: list[AgentProfile], config: MissionConfig,
                        settings: NumericSettings = DEFAULT_SETTINGS,
                        extra_times=None) -> np.ndarray:
    """Sorted, deduplicated union of motion-segment boundaries and every time
    an agent crosses alpha_i - r_n, alpha_i, or alpha_i + r_n.

    Between consecutive breakpoints each per-agent detection probability is
    affine in time, so each joint detection probability is polynomial.
    """
    times, _ = _breakpoints_and_kinks(profiles, config, extra_times)
    return times


def _breakpoints_and_kinks(profiles, config, extra_times=None,
                           tol: float = DEFAULT_SETTINGS.merge_tol):
    T = config.horizon
    times = [0.0, T]
    kink_events: list[Event] = []
    for n, prof in enumerate(profiles):
        locs, groups = _kink_locations(config, n)
        for seg in prof.segments:
            times.append(seg.t0)
            times.append(seg.t1)
            if seg.u == 0 or seg.t1 <= seg.t0:
                continue
            xa, xb = sorted((seg.x0, float(seg.position(seg.t1))))
            lo_idx = int(np.searchsorted(locs, xa, side="right"))
            hi_idx = int(np.searchsorted(locs, xb, side="left"))
            for j in range(lo_idx, hi_idx):
                tk = seg.t0 + (locs[j] - seg.x0) / seg.u
                # crossings within merge_tol of a segment end coincide with
                # the motion event that already breaks the grid there
                if 0.0 < tk < T and seg.t0 + tol < tk < seg.t1 - tol:
                    times.append(tk)
                    for i, _lab in groups[j]:
                        kink_events.append(
                            Event(tk, EventKind.KINK, agent=n, point=i))
    if extra_times is not None:
        times.extend(float(t) for t in extra_times if 0.0 < t < T)
    grid = np.unique(np.asarray(times, dtype=float))
    grid = grid[(grid >= 0.0) & (grid <= T)]
    return grid, kink_events


# ---------------------------------------------------------------------------
# Polynomial helpers.  Coefficients are ascending-order rows; a matrix of
# shape (M, D+1) holds one polynomial per sampling point, in the local time
# variable tau measured from the segment start.

def poly_eval(coeffs: np.ndarray, tau):
    """Horner evaluation of coefficient rows at scalar or vector tau."""
    c = np.asarray(coeffs, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if c.ndim == 1:
        out = np.full(tau.shape if tau.ndim else (), c[-1], dtype=float)
        for k in range(c.shape[-1] - 2, -1, -1):
            out = out * tau + c[k]
        return out
    if tau.ndim == 0:
        out = np.full(c.shape[0], c[:, -1])
        for k in range(c.shape[1] - 2, -1, -1):
            out = out * tau + c[:, k]
        return out
    out = np.broadcast_to(c[:, -1][:, None], (c.shape[0], tau.size)).copy()
    for k in range(c.shape[1] - 2, -1, -1):
        out = out * tau[None, :] + c[:, k][:, None]
    return out


def poly_int(coeffs: np.ndarray) -> np.ndarray:
    """Antiderivative with zero constant term (rows or single polynomial)."""
    c = np.asarray(coeffs, dtype=float)
    if c.ndim == 1:
        return np.concatenate(([0.0], c / np.arange(1, c.size + 1)))
    out = np.zeros((c.shape[0], c.shape[1] + 1))
    out[:, 1:] = c / np.arange(1, c.shape[1] + 1)
    return out


def poly_der(coeffs: np.ndarray) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    if c.shape[-1] <= 1:
        return np.zeros_like(c[..., :1])
    return c[..., 1:] * np.arange(1, c.shape[-1])



def _stationary_points(coeffs: np.ndarray, width: float) -> list[float]:
    """Real stationary points inside (0, width) for degree <= 3 rows."""
    d = poly_der(coeffs)
    out = []
    if d.size == 1:
        return out
    if d.size == 2:
        a1, a2 = d[0], d[1]
        if a2 != 0.0:
            t = -a1 / a2
            if 0.0 < t < width:
                out.append(float(t))
        return out
    if d.size == 3:
        c0, c1, c2 = d
        if c2 == 0.0:
            if c1 != 0.0:
                t = -c0 / c1
                if 0.0 < t < width:
                    out.append(float(t))
            return out
        disc = c1 * c1 - 4.0 * c2 * c0
        if disc >= 0.0:
            sq = math.sqrt(disc)
            for t in ((-c1 - sq) / (2.0 * c2), (-c1 + sq) / (2.0 * c2)):
                if 0.0 < t < width:
                    out.append(float(t))
        return out
    for t in np.roots(d[::-1]):
        if abs(t.imag) < 1e-12 and 0.0 < t.real < width:
            out.append(float(t.real))
    return out


def _horner(c: list, x: float) -> float:
    out = 0.0
    for k in range(len(c) - 1, -1, -1):
        out = out * x + c[k]
    return out


def _scalar_stationary(c: list, width: float) -> list[float]:
    """Stationary points of an ascending-coefficient polynomial in (0, width)."""
    d = [c[k] * k for k in range(1, len(c))]
    while d and d[-1] == 0.0:
        d.pop()
    out = []
    if len(d) == 2:
        t = -d[0] / d[1]
        if 0.0 < t < width:
            out.append(t)
    elif len(d) == 3:
        disc = d[1] * d[1] - 4.0 * d[2] * d[0]
        if disc >= 0.0:
            sq = math.sqrt(disc)
            for t in ((-d[1] - sq) / (2.0 * d[2]), (-d[1] + sq) / (2.0 * d[2])):
                if 0.0 < t < width:
                    out.append(t)
    elif len(d) > 3:
        for t in np.roots(d[::-1]):
            if abs(t.imag) < 1e-12 and 0.0 < t.real < width:
                out.append(float(t.real))
    return out


def _first_negative_quadratic(c: list, lo: float, hi: float) -> float | None:
    """Earliest tau in [lo, hi] where c0 + c1 t + c2 t^2 < 0, given the value
    at lo is nonnegative.  Exact, using the numerically stable root formula."""
    c0, c1, c2 = (c + [0.0, 0.0, 0.0])[:3]
    if _horner(c, lo) < 0.0:
        return lo
    if c2 == 0.0:
        if c1 >= 0.0:
            return None
        t = -c0 / c1
        return t if lo <= t <= hi else None
    disc = c1 * c1 - 4.0 * c2 * c0
    if disc < 0.0:
        return None if c2 > 0.0 else lo  # c2 < 0 with no roots means f < 0
    sq = math.sqrt(disc)
    qq = -0.5 * (c1 + math.copysign(sq, c1)) if c1 != 0.0 else 0.5 * sq
    if qq == 0.0:
        r1 = r2 = -c1 / (2.0 * c2)
    else:
        r1, r2 = sorted((qq / c2, c0 / qq))
    if c2 > 0.0:
        # negative on (r1, r2) only
        if r1 >= lo:
            t = r1
        elif lo < r2:
            return lo if _horner(c, lo) < 0.0 else None
        else:
            return None
        return t if t <= hi and r2 > t else None
    # c2 < 0: negative outside [r1, r2]
    if lo < r1:
        return None  # f(lo) >= 0 means lo is left of r1; f < 0 before r1? no
    t = max(r2, lo)
    return t if t <= hi else None


def _locate_sign_change(coeffs, lo: float, hi: float, want_neg: bool,
                        settings: NumericSettings) -> float | None:
    """Earliest tau in [lo, hi] where the polynomial takes the wanted sign.

    Degree <= 2 is solved in closed form; otherwise the interval is scanned
    with Chebyshev probes plus the polynomial's stationary points, and the
    first sign-change bracket is bisected and polished with Newton steps.
    """
    c = [float(v) for v in coeffs]
    while c and c[-1] == 0.0:
        c.pop()
    if not c:
        return None
    if len(c) <= 3:
        cq = c if want_neg else [-v for v in c]
        return _first_negative_quadratic(cq, lo, hi)
    sign = -1.0 if want_neg else 1.0
    count = max(settings.probe_floor, len(c) + 1)
    width = hi - lo
    taus = [lo + 0.5 * width * (1.0 - math.cos(math.pi * (k + 0.5) / count))
            for k in range(count)]
    taus.extend(t for t in _scalar_stationary(c, hi) if lo < t < hi)
    taus.append(hi)
    taus.sort()
    a, fa = lo, _horner(c, lo)
    if sign * fa > 0.0:
        return lo
    b = None
    for t in taus:
        v = _horner(c, t)
        if sign * v > 0.0:
            b = t
            break
        a = t
    if b is None:
        return None
    # Bisection keeps sign(f(a)) != wanted, sign(f(b)) == wanted; the Newton
    # polish then reaches machine precision on the simple roots that occur.
    for _ in range(30):
        if b - a <= settings.root_tol:
            break
        mid = 0.5 * (a + b)
        if sign * _horner(c, mid) > 0.0:
            b = mid
        else:
            a = mid
    root = 0.5 * (a + b)
    d = [c[k] * k for k in range(1, len(c))]
    for _ in range(3):
        df = _horner(d, root)
        if df == 0.0:
            break
        cand = root - _horner(c, root) / df
        if not (a <= cand <= b):
            break
        if abs(cand - root) <= settings.root_tol * 0.001:
            root = cand
            break
        root = cand
    return min(max(root, a), b)


# ---------------------------------------------------------------------------
# Per-interval sensing geometry.

@dataclass
class IntervalGeometry:
    x0: np.ndarray      # (N,) agent positions at interval start
    u: np.ndarray       # (N,) slopes
    p0: np.ndarray      # (N, M) detection probability at interval start
    dp: np.ndarray      # (N, M) probability slope dp/dt
    zeta: np.ndarray    # (N, M) sign of dp/ds: +1 left of point, -1 right, 0 out



def miss_product(geom: IntervalGeometry, skip: int | None = None) -> np.ndarray:
    """Coefficient rows of prod_n (1 - p_n(tau)), optionally skipping one agent."""
    n_agents, m = geom.p0.shape
    q = np.zeros((m, 1))
    q[:, 0] = 1.0
    for n in range(n_agents):
        if n == skip:
            continue
        a0 = 1.0 - geom.p0[n]
        a1 = -geom.dp[n]
        new = np.zeros((m, q.shape[1] + 1))
        new[:, :-1] = q * a0[:, None]
        new[:, 1:] += q * a1[:, None]
        q = new
    return q


# ---------------------------------------------------------------------------
# Trajectory record.

@dataclass
class Piece:
    t0: float
    t1: float
    coeffs: np.ndarray   # ascending, in tau = t - t0
    boundary: bool       # True while pinned at R = 0


class Trajectory:
    """Complete simulation record: motion, events, exact uncertainty pieces.

    Immutable after construction; values may be shared freely across threads.
    """

    def __init__(self, profiles, grid, events, coeff_tensor, flags, overrides,
                 cost, horizon, int_bp, int_growth, initial_boundary,
                 r0_zero, warnings, degraded, geometry=None):
        self.profiles: list[AgentProfile] = profiles
        self.grid: np.ndarray = grid                      # (K+1,)
        self.events: list[Event] = events                 # ordered, merged
        self._coeffs: np.ndarray = coeff_tensor           # (K, M, D+1)
        self._flags: np.ndarray = flags                   # (K, M) floor flag
        self._overrides: dict = overrides                 # (k, i) -> [Piece]
        self.cost: float = cost
        self.horizon: float = horizon
        self.int_bp: np.ndarray = int_bp                  # per point B * int P dt
        self.int_growth: np.ndarray = int_growth          # per point int A dt
        self.initial_boundary: np.ndarray = initial_boundary
        self.r0_zero: np.ndarray = r0_zero
        self.warnings: list[str] = warnings
        self.degraded: bool = degraded                    # merged-coincidence flag
        self._geometry = geometry                         # (P0, DP, ZETA) tensors

    def geometry_at(self, t0: float, t1: float) -> "IntervalGeometry":
        """Sensing geometry on [t0, t1], which must lie inside one grid cell.

        Served from the tensors cached during integration, with the affine
        probabilities shifted to start at t0.
        """
        p0s, dps, zetas = self._geometry
        k = int(np.searchsorted(self.grid, t0, side="right")) - 1
        k = min(max(k, 0), len(self.grid) - 2)
        p0 = p0s[k] + dps[k] * (t0 - self.grid[k])
        return IntervalGeometry(x0=None, u=None, p0=p0, dp=dps[k], zeta=zetas[k])

    @property
    def n_points(self) -> int:
        return self._coeffs.shape[1]

    @property
    def n_agents(self) -> int:
        return len(self.profiles)

    def pieces(self, i: int):
        """Yield the uncertainty pieces of point i tiling [0, T]."""
        for k in range(len(self.grid) - 1):
            t0, t1 = self.grid[k], self.grid[k + 1]
            if t1 <= t0:
                continue
            ov = self._overrides.get((k, i))
            if ov is not None:
                yield from ov
            else:
                yield Piece(t0, t1, self._coeffs[k, i], bool(self._flags[k, i]))

    def uncertainty(self, i: int, t) -> np.ndarray:
        """Evaluate R_i on a sorted time array (or scalar)."""
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty_like(ts)
        pieces = list(self.pieces(i))
        starts = np.array([p.t0 for p in pieces])
        idx = np.clip(np.searchsorted(starts, ts, side="right") - 1, 0, len(pieces) - 1)
        for k in np.unique(idx):
            p = pieces[k]
            sel = idx == k
            out[sel] = poly_eval(p.coeffs, np.clip(ts[sel], p.t0, p.t1) - p.t0)
        return out if np.ndim(t) else float(out[0])

    def positions(self, t) -> np.ndarray:
        """Agent positions at times t, shape (N,) or (N, len(t))."""
        return np.stack([prof.position(t) for prof in self.profiles])

    def point_stats(self, i: int) -> tuple[float, float, float]:
        """(max, min, mean) of R_i over [0, T]."""
        rmax, rmin, total = -np.inf, np.inf, 0.0
        for p in self.pieces(i):
            width = p.t1 - p.t0
            vals = [float(poly_eval(p.coeffs, 0.0)), float(poly_eval(p.coeffs, width))]
            vals.extend(float(poly_eval(p.coeffs, t)) for t in
                        _stationary_points(p.coeffs, width))
            rmax = max(rmax, max(vals))
            rmin = min(rmin, min(vals))
            total += float(poly_eval(poly_int(p.coeffs), width))
        return rmax, rmin, total / self.horizon

    def emptied(self, i: int) -> bool:
        if self.initial_boundary[i] or self.r0_zero[i]:
            return True
        return any(e.kind == EventKind.BOUNDARY_HIT and e.point == i for e in self.events)


def cost(trajectory: Trajectory) -> float:
    """Time-averaged accumulated uncertainty, recomputed from stored pieces."""
    total = 0.0
    for i in range(trajectory.n_points):
        for p in trajectory.pieces(i):
            total += float(poly_eval(poly_int(p.coeffs), p.t1 - p.t0))
    return total / trajectory.horizon


def stability_report(trajectory: Trajectory) -> list[dict]:
    """Per-point diagnostics: extremes, mean, emptied flag, inflow vs service."""
    rows = []
    for i in range(trajectory.n_points):
        rmax, rmin, rmean = trajectory.point_stats(i)
        inflow = float(trajectory.int_growth[i])
        service = float(trajectory.int_bp[i])
        rows.append({
            "point": i,
            "max": rmax,
            "min": rmin,
            "mean": rmean,
            "emptied": trajectory.emptied(i),
            "inflow": inflow,
            "service": service,
            "stable": inflow < service,
        })
    return rows


# ---------------------------------------------------------------------------
# Event merging.

def _merge_events(raw: list[Event], merge_tol: float):
    """Sort events, cluster within merge_tol, order inside each cluster.

    Inside a cluster: kinks first, then motion events ordered per agent by
    their occurrence sequence (this replays zero-dwell composites correctly),
    then floor exits, then floor hits.  A warning is attached when a cluster
    mixes event types whose replay order is not theoretically neutral.
    """
    if not raw:
        return [], [], False
    raw = sorted(raw, key=lambda e: e.time)
    clusters: list[list[Event]] = [[raw[0]]]
    for e in raw[1:]:
        if e.time - clusters[-1][-1].time <= merge_tol:
            clusters[-1].append(e)
        else:
            clusters.append([e])
    merged: list[Event] = []
    warnings: list[str] = []
    degraded = False
    for cl in clusters:
        t_rep = cl[0].time
        def order(e: Event):
            if e.kind in (EventKind.ARRIVAL, EventKind.DEPARTURE, EventKind.WALL):
                return (1, e.agent, e.seq)
            if e.kind == EventKind.KINK:
                return (0, e.agent, e.point)
            if e.kind == EventKind.BOUNDARY_EXIT:
                return (2, e.point, 0)
            return (3, e.point, 0)
        cl = sorted(cl, key=order)
        if len(cl) > 1 and _cluster_degrades(cl):
            degraded = True
            warnings.append(
                "coincident events at t={:.12g}: ".format(t_rep)
                + "; ".join(f"{e.kind.name} {e.subject()}" for e in cl))
        for e in cl:
            if e.time != t_rep:
                e = Event(t_rep, e.kind, e.agent, e.xi, e.point, e.u_out, e.seq)
            merged.append(e)
    return merged, warnings, degraded


def _cluster_degrades(cluster: list[Event]) -> bool:
    """True when a coincidence can degrade gradient validity.

    Harmless coincidences: kinks with kinks; floor events of distinct points
    (their resets commute and touch disjoint state); and motion events that
    are either one agent's consecutive composite chain or belong to distinct
    agents.  Everything mixing a motion event with a kink or floor event is
    the analog of two state conditions triggering at once and is flagged.
    """
    kinds = {e.kind for e in cluster}
    motion = {EventKind.ARRIVAL, EventKind.DEPARTURE, EventKind.WALL}
    has_motion = bool(kinds & motion)
    has_kink = EventKind.KINK in kinds
    has_floor = bool(kinds & {EventKind.BOUNDARY_HIT, EventKind.BOUNDARY_EXIT})
    if has_floor and (has_motion or has_kink):
        return True
    if has_kink and has_motion:
        return True
    if has_motion:
        # Same-agent events must form one consecutive chain.
        by_agent: dict[int, list[int]] = {}
        for e in cluster:
            if e.kind in motion:
                by_agent.setdefault(e.agent, []).append(e.seq)
        for seqs in by_agent.values():
            seqs.sort()
            if any(b - a != 1 for a, b in zip(seqs, seqs[1:])):
                return True
    return False


# ---------------------------------------------------------------------------
# Main integration.

def simulate(config: MissionConfig, policy: Policy,
             settings: NumericSettings = DEFAULT_SETTINGS,
             process=None) -> Trajectory:
    """Simulate the hybrid dynamics exactly and return the full trajectory.

    ``process`` optionally supplies piecewise-constant growth rates (see
    :mod:`permon.stochastic`); its value-change times join the breakpoint
    grid so rates are constant on every integration interval.
    """
    profiles = build_profile(config, policy, settings)
    extra = process.change_times(config.horizon) if process is not None else None
    grid, kink_events = _breakpoints_and_kinks(profiles, config, extra)
    grid = _cluster_grid(grid, settings.merge_tol, config.horizon)
    n_seg = len(grid) - 1
    m = config.n_points
    n_agents = config.n_agents
    deg = n_agents + 1                            # R piece degree
    points, ranges, decay = config.points, config.ranges, config.decay
    widths = np.diff(grid)
    t0s = grid[:-1]
    mids = t0s + 0.5 * widths

    # Sensing geometry for every interval in one vectorized sweep per agent.
    geom_p0 = np.empty((n_seg, n_agents, m))
    geom_dp = np.empty((n_seg, n_agents, m))
    geom_zeta = np.empty((n_seg, n_agents, m))
    for n, prof in enumerate(profiles):
        idx = np.minimum(np.searchsorted(prof._ends, mids, side="right"),
                         len(prof.segments) - 1)
        seg_t0 = np.array([s.t0 for s in prof.segments])[idx]
        seg_x0 = np.array([s.x0 for s in prof.segments])[idx]
        seg_u = np.array([s.u for s in prof.segments], dtype=float)[idx]
        x0 = seg_x0 + seg_u * (t0s - seg_t0)
        xm = seg_x0 + seg_u * (mids - seg_t0)
        d_mid = points[None, :] - xm[:, None]
        inside = np.abs(d_mid) < ranges[n]
        z = np.where(inside, np.sign(d_mid), 0.0)
        p = 1.0 - np.abs(points[None, :] - x0[:, None]) / ranges[n]
        geom_p0[:, n, :] = np.where(inside, np.clip(p, 0.0, 1.0), 0.0)
        geom_dp[:, n, :] = z * seg_u[:, None] / ranges[n]
        geom_zeta[:, n, :] = z

    # Miss product prod_n (1 - p_n) as ascending coefficients, (K, M, N+1).
    q = np.zeros((n_seg, m, n_agents + 1))
    q[..., 0] = 1.0
    for n in range(n_agents):
        a0 = 1.0 - geom_p0[:, n, :]
        a1 = -geom_dp[:, n, :]
        new = np.zeros((n_seg, m, q.shape[2] + 1))
        new[..., :n + 1] = q[..., :n + 1] * a0[..., None]
        new[..., 1:n + 2] += q[..., :n + 1] * a1[..., None]
        q = new[..., :n + 2]

    if process is not None:
        growth_mat = np.empty((n_seg, m))
        for i in range(m):
            growth_mat[:, i] = process.values_on_grid(i, t0s)
    else:
        growth_mat = np.broadcast_to(config.growth[None, :], (n_seg, m))
    rate = decay * q
    rate[..., 0] += growth_mat - decay

    # g(tau) = integral of the rate from the interval start (zero constant).
    g_poly = np.zeros((n_seg, m, deg + 1))
    g_poly[..., 1:] = rate / np.arange(1, deg + 1)
    flat_g = g_poly.reshape(-1, deg + 1)
    flat_rate = rate.reshape(-1, deg)
    w_rep = np.repeat(widths, m)
    g_end = _eval_rowwise(flat_g, w_rep).reshape(n_seg, m)
    g_min = _min_rowwise(flat_g, w_rep, settings).reshape(n_seg, m)
    rate_max = -_min_rowwise(-flat_rate, w_rep, settings).reshape(n_seg, m)
    ig_poly = np.zeros((n_seg, m, deg + 2))
    ig_poly[..., 1:] = g_poly / np.arange(1, deg + 2)
    i_g = _eval_rowwise(ig_poly.reshape(-1, deg + 2), w_rep).reshape(n_seg, m)
    int_q_w = _eval_rowwise(
        np.concatenate((np.zeros((n_seg * m, 1)),
                        (q / np.arange(1, n_agents + 2)).reshape(-1, n_agents + 1)),
                       axis=1), w_rep).reshape(n_seg, m)
    int_bp = decay * (widths[:, None] - int_q_w).sum(axis=0)

    coeff_tensor = np.zeros((n_seg, m, deg + 1))
    coeff_tensor[..., 1:] = g_poly[..., 1:]
    flag_mat = np.zeros((n_seg, m), dtype=bool)
    overrides: dict[tuple[int, int], list[Piece]] = {}
    floor_events: list[Event] = []

    r = config.r0.copy().astype(float)
    p_at_start = 1.0 - np.prod([
        np.maximum(1.0 - np.abs(points - config.starts[n]) / ranges[n], 0.0)
        for n in range(n_agents)], axis=0)
    growth0 = growth_mat[0] if n_seg else config.growth
    flags = (r == 0.0) & (growth0 <= decay * p_at_start)
    initial_boundary = flags.copy()
    total_cost = 0.0

    for k in range(n_seg):
        width = widths[k]
        if width <= 0.0:
            continue
        suspect = np.where(flags, rate_max[k] > settings.rate_tol,
                           r + g_min[k] <= 0.0)
        if suspect.any():
            clean = ~suspect
            sus_idx = np.nonzero(suspect)[0]
        else:
            clean = slice(None)
            sus_idx = ()
        coeff_tensor[k, :, 0] = r
        flag_mat[k] = flags
        pinned = flags if isinstance(clean, slice) else (flags & clean)
        if pinned.any():
            coeff_tensor[k, pinned] = 0.0
        live = ~flags if isinstance(clean, slice) else (~flags & clean)
        total_cost += float((r[live] * width + i_g[k][live]).sum())
        r = np.where(flags, 0.0, r + g_end[k])
        if len(sus_idx):
            t0 = float(grid[k])
            for i in sus_idx:
                pieces, events, r_i, flag_i, contrib = _integrate_point(
                    int(i), float(coeff_tensor[k, i, 0]), bool(flags[i]),
                    rate[k, i], t0, float(width), settings)
                if len(pieces) == 1 and not events:
                    pc = pieces[0]
                    coeff_tensor[k, i, :] = 0.0
                    coeff_tensor[k, i, :pc.coeffs.size] = pc.coeffs
                    flag_mat[k, i] = pc.boundary
                else:
                    overrides[(k, int(i))] = pieces
                floor_events.extend(events)
                r[i] = r_i
                flags[i] = flag_i
                total_cost += contrib

    motion_events = [e for prof in profiles for e in prof.events
                     if e.time <= config.horizon]
    events, warnings, degraded = _merge_events(
        motion_events + kink_events + floor_events, settings.merge_tol)
    # A positive-duration dwell sitting exactly on a sensing-range boundary
    # makes the cost one-sidedly differentiable there; flag it like an event
    # coincidence.  (A zero-dwell reversal on a boundary only perturbs the
    # cost at second order and stays valid.)
    for n, prof in enumerate(profiles):
        locs, _groups = _kink_locations(config, n)
        if not len(locs):
            continue
        for k in np.nonzero(prof.reached)[0]:
            t_dep = prof.departures[k] if np.isfinite(prof.departures[k]) \
                else config.horizon
            if t_dep - prof.arrivals[k] <= settings.merge_tol:
                continue
            th = policy.switches[n][k]
            j = int(np.clip(np.searchsorted(locs, th), 0, len(locs) - 1))
            near = min(abs(locs[j] - th),
                       abs(locs[j - 1] - th) if j > 0 else np.inf)
            if near <= settings.merge_tol:
                degraded = True
                warnings.append(
                    f"switch {k + 1} of agent {n} at {th:.12g} lies on a "
                    f"sensing-range boundary; gradient validity degraded")
    for msg in warnings:
        log.warning("%s", msg)

    if process is not None:
        int_growth = process.integrals(config.horizon)
    else:
        int_growth = config.growth * config.horizon

    return Trajectory(
        profiles=profiles, grid=grid, events=events,
        coeff_tensor=coeff_tensor, flags=flag_mat, overrides=overrides,
        cost=total_cost / config.horizon, horizon=config.horizon,
        int_bp=int_bp, int_growth=np.asarray(int_growth, dtype=float),
        initial_boundary=initial_boundary, r0_zero=(config.r0 == 0.0),
        warnings=warnings, degraded=degraded,
        geometry=(geom_p0, geom_dp, geom_zeta))


def _cluster_grid(grid: np.ndarray, merge_tol: float, horizon: float) -> np.ndarray:
    """Collapse breakpoints closer than merge_tol, keeping 0 and T exact."""
    if len(grid) == 0:
        return np.array([0.0, horizon])
    keep = [float(grid[0])]
    for t in grid[1:]:
        if t - keep[-1] > merge_tol:
            keep.append(float(t))
    if keep[-1] != horizon:
        if horizon - keep[-1] <= merge_tol and len(keep) > 1:
            keep[-1] = horizon
        else:
            keep.append(horizon)
    if keep[0] != 0.0:
        keep.insert(0, 0.0)
    return np.asarray(keep)


def _eval_rowwise(rows: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Horner evaluation of each coefficient row at its own abscissa."""
    out = np.full(rows.shape[0], rows[:, -1])
    for k in range(rows.shape[1] - 2, -1, -1):
        out = out * x + rows[:, k]
    return out


def _min_rowwise(rows: np.ndarray, widths: np.ndarray,
                 settings: NumericSettings) -> np.ndarray:
    """Per-row minimum over [0, width_row].

    Exact for degrees <= 3 (endpoints plus stationary points); degree >= 4
    falls back to Chebyshev probes.
    """
    deg = rows.shape[1] - 1
    vals = np.minimum(rows[:, 0], _eval_rowwise(rows, widths))
    if deg <= 1:
        return vals
    if deg == 2:
        c0, c1, c2 = rows[:, 0], rows[:, 1], rows[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            tv = np.where(c2 != 0.0, -c1 / (2.0 * c2), -1.0)
        ok = (tv > 0.0) & (tv < widths)
        vv = c0 + tv * (c1 + tv * c2)
        return np.where(ok, np.minimum(vals, vv), vals)
    if deg == 3:
        der = poly_der(rows)
        d0, d1, d2 = der[:, 0], der[:, 1], der[:, 2]
        disc = d1 * d1 - 4.0 * d2 * d0
        with np.errstate(divide="ignore", invalid="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            for sgn in (-1.0, 1.0):
                tv = np.where(d2 != 0.0, (-d1 + sgn * sq) / (2.0 * d2),
                              np.where(d1 != 0.0,
                                       -d0 / np.where(d1 != 0.0, d1, 1.0), -1.0))
                ok = (disc >= 0.0) & (tv > 0.0) & (tv < widths)
                vv = rows[:, 0] + tv * (rows[:, 1] + tv * (rows[:, 2] + tv * rows[:, 3]))
                vals = np.where(ok, np.minimum(vals, vv), vals)
        return vals
    count = max(settings.probe_floor, rows.shape[1] + 1)
    base = 0.5 * (1.0 - np.cos(np.pi * (np.arange(count) + 0.5) / count))
    taus = widths[:, None] * base[None, :]
    probe = np.broadcast_to(rows[:, -1][:, None], taus.shape).copy()
    for k in range(rows.shape[1] - 2, -1, -1):
        probe = probe * taus + rows[:, k][:, None]
    return np.minimum(vals, probe.min(axis=1))




def _int_eval(c: list, x: float) -> float:
    """Integral of an ascending-coefficient polynomial from 0 to x."""
    out = 0.0
    for k in range(len(c) - 1, -1, -1):
        out = out * x + c[k] / (k + 1)
    return out * x


def _integrate_point(i: int, r0: float, on_floor: bool, rate: np.ndarray,
                     t0: float, width: float, settings: NumericSettings):
    """Scalar integration of one point across one interval with floor events.

    Alternates between floor arcs (R pinned at zero until the net rate turns
    positive) and interior arcs (polynomial until R reaches zero with
    negative rate).  Returns pieces, floor events, final state, and the
    exact integral contribution.
    """
    pieces: list[Piece] = []
    events: list[Event] = []
    contrib = 0.0
    tau = 0.0
    r = r0
    rate_list = [float(v) for v in rate]
    for _ in range(settings.max_splits):
        if tau >= width:
            break
        if on_floor:
            # Exits require the net rate to clear a small positive threshold,
            # so that an exact growth/decay balance (up to rounding) keeps the
            # floor arc instead of chattering.
            shifted = rate.copy()
            shifted[0] -= settings.rate_tol
            t_exit = _locate_sign_change(shifted, tau, width, want_neg=False,
                                         settings=settings)
            if t_exit is not None:
                # The root can land one ulp before the crossing; step forward
                # until the rate is truly nonnegative so the interior leg
                # cannot bounce straight back onto the floor.
                for _ in range(64):
                    if _horner(rate_list, t_exit) >= 0.0 or t_exit >= width:
                        break
                    t_exit = np.nextafter(t_exit, np.inf)
                t_exit = min(t_exit, width)
            end = width if t_exit is None else t_exit
            if end > tau:
                pieces.append(Piece(t0 + tau, t0 + end,
                                    np.zeros(rate.size + 1), True))
            if t_exit is None or t_exit >= width:
                r = 0.0
                tau = width
                break
            events.append(Event(t0 + t_exit, EventKind.BOUNDARY_EXIT, point=i))
            on_floor = False
            tau = t_exit
            r = 0.0
        else:
            if r <= 0.0:
                # Rounding can leave a hair-negative value at interval entry;
                # only a genuinely negative net rate re-enters the floor.
                if _horner(rate_list, tau) < -settings.rate_tol:
                    events.append(Event(t0 + tau, EventKind.BOUNDARY_HIT, point=i))
                    on_floor = True
                    r = 0.0
                    continue
                r = 0.0
            # Local polynomial for R from tau with value r.
            local = _shift_rate_int(rate, tau, r)
            local_list = [float(v) for v in local]
            rem = width - tau
            t_hit = _locate_sign_change(local, 0.0, rem, want_neg=True,
                                        settings=settings)
            end = rem if t_hit is None else t_hit
            if end > 0.0:
                pieces.append(Piece(t0 + tau, t0 + tau + end, local, False))
                contrib += _int_eval(local_list, end)
            if t_hit is None:
                r = _horner(local_list, rem)
                tau = width
                break
            rate_here = _horner(rate_list, tau + t_hit)
            if abs(rate_here) <= 1e-12:
                # Tangency: decide by the rate just after the touch point.
                rate_here = _horner(rate_list, min(tau + t_hit + 1e-9, width))
            if rate_here >= 0.0:
                # Graze: R touches zero without crossing; continue interior
                # with R = 0 (no event, dynamics continuous).
                tau = tau + t_hit
                r = 0.0
                continue
            events.append(Event(t0 + tau + t_hit, EventKind.BOUNDARY_HIT, point=i))
            on_floor = True
            tau = tau + t_hit
            r = 0.0
    else:
        raise NumericError(
            f"point {i}: more than {settings.max_splits} floor transitions in "
            f"[{t0}, {t0 + width}]; rate coefficients {rate.tolist()}")
    if tau >= width and not pieces:
        pieces.append(Piece(t0, t0 + width, np.zeros(rate.size + 1), on_floor))
    return pieces, events, r, on_floor, contrib


def _shift_rate_int(rate: np.ndarray, tau: float, r: float) -> np.ndarray:
    """Polynomial r + int_tau^{tau+x} rate, as coefficients in x."""
    d = rate.size
    shifted = np.zeros(d)
    # rate(tau + x) via binomial expansion
    for k in range(d):
        ck = rate[k]
        if ck == 0.0:
            continue
        for j in range(k + 1):
            shifted[j] += ck * math.comb(k, j) * tau ** (k - j)
    out = poly_int(shifted)
    out[0] = r
    return out
