import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from app.core_types import Grid1D, Polyline, ScalarField, Trajectory
from app.flow_callbacks import notify_finish, notify_snapshot
from app.gcsf_ops import snapshot_schedule
from app.lab_errors import DegenerateGeometryError, DomainError, MultivaluedGraphError

logger = logging.getLogger(__name__)

# Extracted heights must lie this far below the cap
_CAP_CLEARANCE = 1.0

# Extra height above the Grim Reaper envelope for the capped ends
_CAP_HEADROOM = 4.0

# Largest extraction margin tried before giving up
_MAX_EPSILON_MARGIN = 0.25

# Vertices this close to the other curve, relative to the coordinate scale,
# lie on it
_CONTACT_RELATIVE_TOL = 1e-12


@dataclass(frozen=True)
class CurveFlowOptions:
    dt_safety: float = 0.25
    redistribute_every: int = 5
    y_cap: Optional[float] = None
    pin_ends: bool = True
    # Closed curves shorter than this fraction of their initial length are extinct
    extinction_fraction: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.dt_safety <= 0.5:
            raise DomainError(
                f"dt_safety must lie in (0, 0.5] (got {self.dt_safety})"
            )
        if self.redistribute_every < 1:
            raise DomainError(
                f"redistribute_every must be >= 1 (got {self.redistribute_every})"
            )


# ----------------------------
# Discrete geometry
# ----------------------------


def curvature_vectors(p: Polyline) -> np.ndarray:
    """2 (T+ - T-) / (|e+| + |e-|) at each vertex; zero at open endpoints"""
    if len(p) < 3:
        raise DomainError("Curvature needs at least 3 vertices")
    v = p.vertices
    if p.closed:
        forward = np.roll(v, -1, axis=0) - v
        backward = v - np.roll(v, 1, axis=0)
    else:
        forward = v[2:] - v[1:-1]
        backward = v[1:-1] - v[:-2]
    len_f = np.hypot(*forward.T)
    len_b = np.hypot(*backward.T)
    if np.any(len_f == 0.0) or np.any(len_b == 0.0):
        raise DegenerateGeometryError("Duplicate vertices")
    kappa = (
        2.0
        * (forward / len_f[:, None] - backward / len_b[:, None])
        / (len_f + len_b)[:, None]
    )
    if p.closed:
        return kappa
    return np.vstack((np.zeros(2), kappa, np.zeros(2)))


def redistribute(p: Polyline) -> Polyline:
    """Same vertex count, uniform arclength spacing"""
    v = p.vertices
    if p.closed:
        loop = np.vstack((v, v[:1]))
        s = np.concatenate(([0.0], np.cumsum(p.chord_lengths())))
        spline = CubicSpline(s, loop, axis=0, bc_type="periodic")
        return Polyline(spline(np.linspace(0.0, s[-1], len(v) + 1)[:-1]), True)
    s = np.concatenate(([0.0], np.cumsum(p.chord_lengths())))
    spline = PchipInterpolator(s, v, axis=0)
    new = spline(np.linspace(0.0, s[-1], len(v)))
    new[0], new[-1] = v[0], v[-1]
    return Polyline(new, False)


def stable_dt(p: Polyline, opts: CurveFlowOptions) -> float:
    return opts.dt_safety * float(np.min(p.chord_lengths())) ** 2


def csf_step(
    p: Polyline, dt: float, opts: CurveFlowOptions, *, step_index: int = 1
) -> Polyline:
    """Forward Euler move of every vertex by dt times its curvature vector

    Vertices are redistributed when step_index is a multiple of
    opts.redistribute_every."""
    if not 0.0 < dt <= stable_dt(p, opts) * (1.0 + 1e-9):
        raise DomainError(f"dt={dt} violates dt <= dt_safety * (min chord)^2")
    velocity = curvature_vectors(p)
    if not p.closed and not opts.pin_ends:
        velocity[0], velocity[-1] = velocity[1], velocity[-2]
    moved = Polyline(p.vertices + dt * velocity, p.closed)
    if step_index % opts.redistribute_every == 0:
        moved = redistribute(moved)
    return moved


def _point_segment_distances(
    points: np.ndarray, start: np.ndarray, end: np.ndarray
) -> np.ndarray:
    d = end - start
    rel = points[:, None, :] - start[None, :, :]
    lam = np.clip(np.sum(rel * d, axis=2) / np.sum(d * d, axis=1), 0.0, 1.0)
    closest = start[None, :, :] + lam[:, :, None] * d[None, :, :]
    return np.hypot(*(points[:, None, :] - closest).transpose(2, 0, 1))


def _orientation(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Cross product of b - a and p - a, positive when p lies left of a -> b"""
    return (b[..., 0] - a[..., 0]) * (p[..., 1] - a[..., 1]) - (
        b[..., 1] - a[..., 1]
    ) * (p[..., 0] - a[..., 0])


def _crossing_matrix(
    s1: Tuple[np.ndarray, np.ndarray], s2: Tuple[np.ndarray, np.ndarray]
) -> np.ndarray:
    (a, b), (c, d) = s1, s2

    def side(p, q, r):
        # Zero orientation counts as positive so shared vertices are seen once
        return _orientation(p, q, r) >= 0.0

    a, b = a[:, None, :], b[:, None, :]
    c, d = c[None, :, :], d[None, :, :]
    return (side(a, b, c) != side(a, b, d)) & (side(c, d, a) != side(c, d, b))


@dataclass(frozen=True)
class IntersectionEvent:
    x: float
    y: float
    # "crossing" or "touch"
    kind: str


def tangency_tolerance(p1: Polyline, p2: Polyline) -> float:
    """2 x the longest chord of either polyline"""
    longest = max(float(np.max(p.chord_lengths())) for p in (p1, p2))
    return 2.0 * longest


def _segment_ends(p: Polyline) -> Tuple[np.ndarray, np.ndarray]:
    n = len(p)
    first = np.arange(n if p.closed else n - 1)
    return first, (first + 1) % n


def _runs(mask: np.ndarray, closed: bool) -> List[np.ndarray]:
    """Maximal runs of consecutive True indices, wrapping for closed curves"""
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return []
    runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    wraps = runs[0][0] == 0 and runs[-1][-1] == len(mask) - 1
    if closed and len(runs) > 1 and wraps:
        runs = [np.concatenate((runs[-1], runs[0]))] + runs[1:-1]
    return runs


def _proper_crossings(
    p1: Polyline, p2: Polyline, d12: np.ndarray, d21: np.ndarray, zero_tol: float
) -> List[IntersectionEvent]:
    """Segment pairs whose interiors cross with strict orientation changes"""
    (a, b), (c, d) = p1.segments(), p2.segments()
    A, B = a[:, None, :], b[:, None, :]
    C, D = c[None, :, :], d[None, :, :]
    o1, o2 = _orientation(A, B, C), _orientation(A, B, D)
    o3, o4 = _orientation(C, D, A), _orientation(C, D, B)
    proper = (o1 * o2 < 0.0) & (o3 * o4 < 0.0)
    # A segment end lying on the other segment is a contact, not a crossing
    i0, i1 = _segment_ends(p1)
    j0, j1 = _segment_ends(p2)
    contact = (
        (d12[i0] <= zero_tol)
        | (d12[i1] <= zero_tol)
        | (d21[j0].T <= zero_tol)
        | (d21[j1].T <= zero_tol)
    )
    i, j = np.nonzero(proper & ~contact)
    lam = o3[i, j] / (o3[i, j] - o4[i, j])
    points = a[i] + lam[:, None] * (b[i] - a[i])
    return [IntersectionEvent(float(x), float(y), "crossing") for x, y in points]


def _vertex_events(
    p: Polyline,
    dist: np.ndarray,
    other: Tuple[np.ndarray, np.ndarray],
    near_tol: float,
    zero_tol: float,
) -> List[IntersectionEvent]:
    """Contacts and sub-chord touches seen from the vertices of p

    The crossing function is the signed distance of each vertex to the line
    of its nearest segment on the other curve. A run of vertices lying on the
    other curve is one event, a crossing when the vertices bracketing the run
    sit on opposite sides and a touch otherwise. Near the other curve, a
    local minimum of the unsigned crossing function whose quadratic fit
    reaches zero is a touch between vertices."""
    n = len(p)
    v = p.vertices
    nearest = np.argmin(dist, axis=1)
    gap = dist[np.arange(n), nearest]
    start, end = other[0][nearest], other[1][nearest]
    f = _orientation(start, end, v) / np.hypot(*(end - start).T)

    events = []
    for run in _runs(gap <= zero_tol, p.closed):
        before, after = run[0] - 1, run[-1] + 1
        kind = "touch"
        if len(run) < n and (p.closed or (before >= 0 and after < n)):
            s, e = other[0][nearest[run[0]]], other[1][nearest[run[0]]]
            sides = _orientation(s, e, v[[before % n, after % n]])
            if sides[0] * sides[1] < 0.0:
                kind = "crossing"
        x, y = v[run[0]]
        events.append(IntersectionEvent(float(x), float(y), kind))

    k = np.arange(n) if p.closed else np.arange(1, n - 1)
    if len(k) == 0:
        return events
    prev, nxt = (k - 1) % n, (k + 1) % n
    sign = np.sign(f[k])
    g0, g1, g2 = sign * f[prev], sign * f[k], sign * f[nxt]
    curvature = g0 - 2.0 * g1 + g2
    safe = np.where(curvature > 0.0, curvature, 1.0)
    low = np.where(curvature > 0.0, g1 - (g2 - g0) ** 2 / (8.0 * safe), g1)
    dip = (
        (sign != 0.0)
        & (np.sign(f[prev]) == sign)
        & (np.sign(f[nxt]) == sign)
        & (gap[k] > zero_tol)
        & (gap[k] < near_tol)
        & (g1 < g0)
        & (g1 <= g2)
        & (low <= zero_tol)
    )
    for i in k[dip]:
        events.append(IntersectionEvent(float(v[i, 0]), float(v[i, 1]), "touch"))
    return events


def intersection_events(p1: Polyline, p2: Polyline) -> List[IntersectionEvent]:
    """Transversal crossings plus one event per contact or tangential touch

    Touches are looked for within tangency_tolerance of the other curve.
    Events seen from p2 that lie within that tolerance of an event seen from
    p1 are the same event."""
    near_tol = tangency_tolerance(p1, p2)
    scale = max(1.0, *(float(np.max(np.abs(p.vertices))) for p in (p1, p2)))
    zero_tol = _CONTACT_RELATIVE_TOL * scale
    s1, s2 = p1.segments(), p2.segments()
    d12 = _point_segment_distances(p1.vertices, *s2)
    d21 = _point_segment_distances(p2.vertices, *s1)
    events = _proper_crossings(p1, p2, d12, d21, zero_tol)
    events += _vertex_events(p1, d12, s2, near_tol, zero_tol)
    seen = list(events)
    for e in _vertex_events(p2, d21, s1, near_tol, zero_tol):
        if all(math.hypot(e.x - o.x, e.y - o.y) >= near_tol for o in seen):
            events.append(e)
    return events


def count_intersections(p1: Polyline, p2: Polyline) -> int:
    return len(intersection_events(p1, p2))


def count_self_intersections(p: Polyline) -> int:
    crossings = _crossing_matrix(p.segments(), p.segments())
    k = crossings.shape[0]
    i, j = np.triu_indices(k, 2)
    keep = ~((i == 0) & (j == k - 1)) if p.closed else np.ones(len(i), bool)
    return int(np.count_nonzero(crossings[i[keep], j[keep]]))


def min_distance(p1: Polyline, p2: Polyline) -> float:
    if count_intersections(p1, p2) > 0:
        return 0.0
    d12 = _point_segment_distances(p1.vertices, *p2.segments())
    d21 = _point_segment_distances(p2.vertices, *p1.segments())
    return float(min(d12.min(), d21.min()))


def hausdorff_distance(p1: Polyline, p2: Polyline) -> float:
    d12 = _point_segment_distances(p1.vertices, *p2.segments()).min(axis=1)
    d21 = _point_segment_distances(p2.vertices, *p1.segments()).min(axis=1)
    return float(max(d12.max(), d21.max()))


def graph_polyline(x: np.ndarray, y: np.ndarray) -> Polyline:
    return Polyline(np.column_stack((x, y)), closed=False)


def counts_non_increasing(counts: Sequence[int]) -> bool:
    """True if counts never rise above their running minimum for two snapshots"""
    running = math.inf
    for k, c in enumerate(counts):
        if c > running:
            recovered = k + 1 < len(counts) and counts[k + 1] <= running
            if not recovered:
                return False
        else:
            running = c
    return True


# ----------------------------
# Flows
# ----------------------------


def _advance(
    curves: List[Polyline],
    schedule: Sequence[float],
    opts: CurveFlowOptions,
    kind: str,
) -> Tuple[List[float], List[List[Polyline]], Optional[float], int]:
    initial_lengths = [c.length() for c in curves]
    times, states = [0.0], [[c] for c in curves]
    notify_snapshot(kind, 0.0, curves)
    t, steps, extinct_at = 0.0, 0, None
    for target in schedule[1:]:
        while t < target and extinct_at is None:
            dt = min(stable_dt(c, opts) for c in curves)
            remaining = target - t
            if dt >= remaining:
                dt = remaining
            steps += 1
            curves = [csf_step(c, dt, opts, step_index=steps) for c in curves]
            t = target if dt == remaining else t + dt
            if any(
                c.closed and c.length() < opts.extinction_fraction * length0
                for c, length0 in zip(curves, initial_lengths)
            ):
                extinct_at = t
        if t > times[-1]:
            times.append(t)
            for history, c in zip(states, curves):
                history.append(c)
            notify_snapshot(kind, t, curves)
            logger.debug(f"CSF snapshot t={t:.6g} after {steps} steps")
        if extinct_at is not None:
            logger.info(f"Closed curve reached extinction size at t={t:.6g}")
            break
    return times, states, extinct_at, steps


def flow_curves(
    polylines: Sequence[Polyline],
    t_end: float,
    opts: Optional[CurveFlowOptions] = None,
    snapshot_times: Sequence[float] = (),
) -> List[Trajectory]:
    """Flows several polylines on one shared time grid"""
    opts = opts or CurveFlowOptions()
    schedule = snapshot_schedule(t_end, snapshot_times)
    times, states, extinct_at, steps = _advance(list(polylines), schedule, opts, "csf")
    trajectories = [
        Trajectory(
            times,
            tuple(history),
            {
                "solver": "csf",
                "steps": steps,
                "extinct_at": extinct_at,
                "lengths": [c.length() for c in history],
                "self_intersecting": [
                    count_self_intersections(c) > 0 for c in history
                ],
            },
        )
        for history in states
    ]
    for traj in trajectories:
        notify_finish("csf", traj)
    return trajectories


def flow_curve(
    p: Polyline,
    t_end: float,
    opts: Optional[CurveFlowOptions] = None,
    snapshot_times: Sequence[float] = (),
) -> Trajectory:
    return flow_curves([p], t_end, opts, snapshot_times)[0]


# ----------------------------
# Local GCSF
# ----------------------------


def _segment_angles(start: np.ndarray, end: np.ndarray) -> np.ndarray:
    """pi/2 plus the direction angle, 0 on a downward ray and pi on an upward one"""
    d = end - start
    return math.pi / 2.0 + np.arctan2(d[:, 1], d[:, 0])


def edge_angle(p: Polyline, y_level: float) -> float:
    """Angle of the rightmost segment of p that crosses height y_level"""
    start, end = p.segments()
    crossing = (np.minimum(start[:, 1], end[:, 1]) <= y_level) & (
        y_level <= np.maximum(start[:, 1], end[:, 1])
    )
    if not np.any(crossing):
        raise DomainError(f"Curve never reaches height {y_level}")
    candidates = np.flatnonzero(crossing)
    i = candidates[np.argmax(start[candidates, 0] + end[candidates, 0])]
    return float(_segment_angles(start[i : i + 1], end[i : i + 1])[0])


def angle_range(p: Polyline, x_lo: float, x_hi: float) -> Tuple[float, float]:
    """Extreme angles of the rightward segments of p overlapping [x_lo, x_hi]"""
    start, end = p.segments()
    overlap = (end[:, 0] > start[:, 0]) & (end[:, 0] > x_lo) & (start[:, 0] < x_hi)
    if not np.any(overlap):
        raise DomainError(f"No rightward segment over [{x_lo}, {x_hi}]")
    angles = _segment_angles(start[overlap], end[overlap])
    return float(np.min(angles)), float(np.max(angles))


def _check_unit_interval(u0: ScalarField) -> None:
    if abs(u0.grid.left + 1.0) > 1e-12 or abs(u0.grid.right - 1.0) > 1e-12:
        raise DomainError(f"Local GCSF data must live on (-1, 1), got {u0.grid.span}")


def build_local_initial_curve(
    u0: ScalarField, y_cap: float, h: Optional[float] = None
) -> Polyline:
    """Graph of u0 joined to vertical rays over x = -1 and x = 1 up to y_cap"""
    _check_unit_interval(u0)
    if not y_cap > float(np.max(u0.values)) + 1.0:
        raise DomainError(f"y_cap={y_cap} must exceed max u0 + 1")
    h = u0.grid.dx if h is None else h

    def ray(x: float, bottom: float) -> np.ndarray:
        n = max(2, int(math.ceil((y_cap - bottom) / h)) + 1)
        return np.column_stack((np.full(n, x), np.linspace(y_cap, bottom, n)))

    left = ray(-1.0, float(u0.values[0]))
    right = ray(1.0, float(u0.values[-1]))[::-1]
    graph = np.column_stack((u0.x, u0.values))
    return Polyline(np.vstack((left[:-1], graph, right[1:])), closed=False)


def graph_extract(p: Polyline, grid: Grid1D, y_max: float = math.inf) -> ScalarField:
    """Heights where p crosses the vertical line through each node, below y_max"""
    start, end = p.segments()
    xa, ya = start.T
    xb, yb = end.T
    run = xb - xa
    slanted = run != 0.0
    safe_run = np.where(slanted, run, 1.0)

    x = grid.nodes[:, None]
    hit = (x >= np.minimum(xa, xb)) & (x <= np.maximum(xa, xb)) & slanted
    y = ya + (x - xa) / safe_run * (yb - ya)

    # A node on a shared vertex is claimed by the earlier segment only
    previous = np.roll(hit, 1, axis=1)
    if not p.closed:
        previous[:, 0] = False
    hit &= ~((x == xa) & previous)
    hit &= y < y_max

    counts = hit.sum(axis=1)
    bad = np.flatnonzero(counts != 1)
    if len(bad):
        raise MultivaluedGraphError(bad.tolist(), counts[bad].tolist())
    return ScalarField(grid, np.where(hit, y, 0.0).sum(axis=1))


def clipped_area(p: Polyline, x_lo: float, x_hi: float) -> float:
    """Signed integral of y dx along the part of p with x_lo <= x <= x_hi"""
    start, end = p.segments()
    run = end[:, 0] - start[:, 0]
    slanted = run != 0.0
    safe_run = np.where(slanted, run, 1.0)
    lam_lo = (x_lo - start[:, 0]) / safe_run
    lam_hi = (x_hi - start[:, 0]) / safe_run
    enter = np.clip(np.minimum(lam_lo, lam_hi), 0.0, 1.0)
    leave = np.clip(np.maximum(lam_lo, lam_hi), 0.0, 1.0)
    p1 = start + enter[:, None] * (end - start)
    p2 = start + leave[:, None] * (end - start)
    area = (p2[:, 0] - p1[:, 0]) * (p1[:, 1] + p2[:, 1]) / 2.0
    return float(np.sum(np.where(slanted & (leave > enter), area, 0.0)))


def _extract_all(
    curves: Sequence[Polyline], dx: float, epsilon: float, y_max: float
) -> List[ScalarField]:
    grid = Grid1D.with_spacing(-1.0 + epsilon, 1.0 - epsilon, dx)
    return [graph_extract(c, grid, y_max) for c in curves]


def local_gcsf_flow(
    u0: ScalarField,
    t_end: float,
    opts: Optional[CurveFlowOptions] = None,
    snapshot_times: Sequence[float] = (),
    h: Optional[float] = None,
) -> Tuple[Trajectory, Trajectory]:
    """Local GCSF on (-1, 1) as (graph snapshots, curve snapshots)"""
    opts = opts or CurveFlowOptions()
    _check_unit_interval(u0)
    if float(np.min(u0.values)) < 0.0:
        raise DomainError("Local GCSF needs u0 >= 0")
    h = u0.grid.dx if h is None else h
    y_cap = max(
        opts.y_cap or 0.0,
        float(np.max(u0.values)) + math.pi * t_end / 2.0 + _CAP_HEADROOM,
    )
    curve = build_local_initial_curve(u0, y_cap, h)
    schedule = snapshot_schedule(t_end, snapshot_times)
    times, states, _, steps = _advance([curve], schedule, opts, "local-gcsf")
    curves = states[0]

    epsilon = 2.0 * h
    while True:
        try:
            fields = _extract_all(curves, u0.grid.dx, epsilon, y_cap - _CAP_CLEARANCE)
            break
        except MultivaluedGraphError as e:
            if 2.0 * epsilon > _MAX_EPSILON_MARGIN:
                logger.error(f"Graph extraction failed at epsilon={epsilon}: {e}")
                raise
            logger.debug(f"Extraction multivalued at epsilon={epsilon}, doubling")
            epsilon *= 2.0

    full_masses = [clipped_area(c, -math.inf, math.inf) for c in curves]
    edge_masses = [
        (
            clipped_area(c, -math.inf, -1.0 + epsilon),
            clipped_area(c, 1.0 - epsilon, math.inf),
        )
        for c in curves
    ]
    ceiling = y_cap - _CAP_CLEARANCE
    meta = {
        "solver": "local-gcsf",
        "steps": steps,
        "epsilon_margin": epsilon,
        "y_cap": y_cap,
        "h": h,
        "dt": stable_dt(curve, opts),
        "a_bar": full_masses[0],
        "full_masses": full_masses,
        "edge_masses": edge_masses,
        "right_edge_angles": [edge_angle(c, ceiling) for c in curves],
        # Curve angles over the last cell of each extracted grid
        "right_inner_angle_ranges": [
            angle_range(c, float(f.x[-2]), float(f.x[-1]))
            for c, f in zip(curves, fields)
        ],
        "lengths": [c.length() for c in curves],
    }
    fields_traj = Trajectory(times, tuple(fields), meta)
    curves_traj = Trajectory(times, tuple(curves), {"solver": "local-gcsf"})
    logger.info(
        f"Local GCSF finished: t_end={t_end}, {steps} steps, epsilon={epsilon:.4g}"
    )
    notify_finish("local-gcsf", fields_traj)
    return fields_traj, curves_traj


def local_gcsf_solve(
    u0: ScalarField,
    t_end: float,
    opts: Optional[CurveFlowOptions] = None,
    snapshot_times: Sequence[float] = (),
    h: Optional[float] = None,
) -> Trajectory:
    return local_gcsf_flow(u0, t_end, opts, snapshot_times, h)[0]
