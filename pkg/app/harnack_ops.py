import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad

from app.core_types import (
    EstimateReport,
    ScalarField,
    Trajectory,
    check_tolerance,
    combine_reports,
)
from app.env import GCSF_TOL_SCALE
from app.exact_solutions import domination_envelope
from app.lab_errors import DomainError

logger = logging.getLogger(__name__)

# Relative tolerance of the right-edge identity H(1, t) = A_bar - pi t
RIGHT_EDGE_RELATIVE_TOL = 0.02

# Slack on a graph angle compared with the curve angles it was sampled from
_ANGLE_ROUNDOFF = 1e-9


@dataclass(frozen=True)
class HarnackState:
    t: float
    A: ScalarField
    phi: ScalarField
    H: ScalarField


# ----------------------------
# Area, angle and Harnack quantity
# ----------------------------


def area_function(u: ScalarField, left_mass: float = 0.0) -> ScalarField:
    """Cumulative integral of u from the left grid edge, plus left_mass"""
    return u.with_values(left_mass + cumulative_trapezoid(u.values, u.x, initial=0.0))


def angle_function(u: ScalarField) -> ScalarField:
    """arctan(u_x) + pi/2 with central differences, one-sided at the edges"""
    slope = np.gradient(u.values, u.grid.dx)
    return u.with_values(np.arctan(slope) + math.pi / 2.0)


def harnack_quantity(u: ScalarField, t: float, left_mass: float = 0.0) -> ScalarField:
    if t < 0:
        raise DomainError(f"t must be >= 0 (got {t})")
    return harnack_state(u, t, left_mass).H


def harnack_state(u: ScalarField, t: float, left_mass: float = 0.0) -> HarnackState:
    A = area_function(u, left_mass)
    phi = angle_function(u)
    return HarnackState(t, A, phi, u.with_values(A.values - 2.0 * t * phi.values))


def flux_identity_bound(v: np.ndarray) -> np.ndarray:
    """|arctan(v) + v / (1 + v^2)|, never above pi/2"""
    v = np.asarray(v, dtype=float)
    return np.abs(np.arctan(v) + v / (1.0 + v * v))


def sliver_envelope_mass(epsilon: float, sup_u0: float, t: float) -> float:
    """Grim Reaper bound on the integral of u over (-1, -1 + epsilon)"""
    if epsilon <= 0.0:
        return 0.0
    value, _ = quad(
        lambda x: domination_envelope(x, sup_u0, t), -1.0, -1.0 + epsilon, limit=200
    )
    return float(value)


def harnack_tolerance(traj: Trajectory, tol_scale: float = GCSF_TOL_SCALE) -> float:
    """10 (dx + dt) (1 + t_end)"""
    dt = traj.meta.get("dt")
    if dt is None:
        dt = float(np.min(np.diff(traj.times))) if len(traj) > 1 else 0.0
    dt = float(dt)
    return tol_scale * 10.0 * (traj.grid.dx + dt) * (1.0 + float(traj.times[-1]))


def _edge_masses(traj: Trajectory) -> List[Tuple[float, float]]:
    masses = traj.meta.get("edge_masses")
    if masses is None:
        return [(0.0, 0.0)] * len(traj)
    return [(float(a), float(b)) for a, b in masses]


def _left_masses(traj: Trajectory) -> List[float]:
    return [left for left, _ in _edge_masses(traj)]


# ----------------------------
# Checks
# ----------------------------


def check_harnack(
    traj: Trajectory, tol_scale: float = GCSF_TOL_SCALE
) -> EstimateReport:
    """min over snapshots and nodes of H + pi t, against -tol_harnack"""
    tol = harnack_tolerance(traj, tol_scale)
    margin, witness = math.inf, (None, None)
    for t, u, left in zip(traj.times, traj.states, _left_masses(traj)):
        H = harnack_quantity(u, float(t), left)
        slack = H.values + math.pi * t
        i = int(np.argmin(slack))
        if slack[i] < margin:
            margin, witness = float(slack[i]), (float(u.x[i]), float(t))
    logger.debug(f"Harnack margin {margin:.3e} (tol {tol:.3e})")
    return EstimateReport.from_margin("harnack", margin, tol, witness)


def _boundary_setup(
    traj: Trajectory, tol_scale: float
) -> Tuple[float, List[Tuple[float, float]], float, List[HarnackState]]:
    if len(traj) < 3:
        raise DomainError("Boundary identities need at least 3 snapshots")
    base_tol = harnack_tolerance(traj, tol_scale)
    masses = _edge_masses(traj)
    a_bar = float(
        traj.meta.get("a_bar", sum(masses[0]) + _trapezoid_mass(traj.states[0]))
    )
    states = [
        harnack_state(u, float(t), left)
        for t, u, (left, _) in zip(traj.times, traj.states, masses)
    ]
    return base_tol, masses, a_bar, states


def check_boundary_left(
    traj: Trajectory, tol_scale: float = GCSF_TOL_SCALE
) -> EstimateReport:
    """H at the left inner edge tends to 0 as the margin shrinks"""
    base_tol, _, _, states = _boundary_setup(traj, tol_scale)
    epsilon = float(traj.meta.get("epsilon_margin", 0.0))
    sup_u0 = float(np.max(traj.states[0].values))
    margin, witness = math.inf, None
    for s in states:
        allowance = (
            sliver_envelope_mass(epsilon, sup_u0, s.t)
            + 2.0 * math.pi * s.t * epsilon
            + base_tol
        )
        slack = allowance - abs(float(s.H.values[0]))
        if slack < margin:
            margin, witness = slack, s.t
    return EstimateReport.from_margin(
        "boundary-left", margin, 0.0, (traj.grid.left, witness)
    )


def check_boundary_right(
    traj: Trajectory, tol_scale: float = GCSF_TOL_SCALE
) -> EstimateReport:
    """H(1, t) = A_bar - pi t within RIGHT_EDGE_RELATIVE_TOL

    H at the right inner edge is carried across the edge strip by the strip
    mass minus 2t times the angle gained between the inner edge and the
    curve at the extraction ceiling. Local flows also record the curve angles
    over the last grid cell, and the inner edge angle must lie among them
    while the inner edge area matches the curve area up to the inner edge."""
    base_tol, masses, a_bar, states = _boundary_setup(traj, tol_scale)
    edge_angles = traj.meta.get("right_edge_angles")
    inner_ranges = traj.meta.get("right_inner_angle_ranges")
    full_masses = traj.meta.get("full_masses")
    margin, witness, values = math.inf, None, []
    for k, (s, (_, right_mass)) in enumerate(zip(states, masses)):
        inner_value = float(s.H.values[-1])
        inner_angle = float(s.phi.values[-1])
        edge = inner_angle if edge_angles is None else float(edge_angles[k])
        value = inner_value + right_mass - 2.0 * s.t * (edge - inner_angle)
        expected = a_bar - math.pi * s.t
        allowance = RIGHT_EDGE_RELATIVE_TOL * max(
            abs(expected), a_bar, math.pi * s.t, 1e-3
        )
        slack = allowance - abs(value - expected)
        row = {
            "t": s.t,
            "value": value,
            "expected": expected,
            "inner_edge_value": inner_value,
            "edge_angle": edge,
        }
        if inner_ranges is not None:
            lo, hi = inner_ranges[k]
            angle_gap = max(lo - inner_angle, inner_angle - hi, 0.0)
            area_gap = 0.0
            if full_masses is not None:
                curve_area = float(full_masses[k]) - right_mass
                area_gap = abs(float(s.A.values[-1]) - curve_area)
            mismatch = 2.0 * s.t * max(angle_gap - _ANGLE_ROUNDOFF, 0.0) + area_gap
            row["curve_mismatch"] = mismatch
            slack = min(slack, base_tol - mismatch)
        values.append(row)
        if slack < margin:
            margin, witness = slack, s.t
    return EstimateReport.from_margin(
        "boundary-right", margin, 0.0, (traj.grid.right, witness), values=values
    )


def check_area_rate(
    traj: Trajectory, tol_scale: float = GCSF_TOL_SCALE
) -> EstimateReport:
    """Centered time difference of A against phi on interior nodes

    The difference reaching back to the t = 0 corner data is skipped when
    enough snapshots remain."""
    base_tol, _, _, states = _boundary_setup(traj, tol_scale)
    A = np.vstack([s.A.values for s in states])
    phi = np.vstack([s.phi.values for s in states])
    dt = (traj.times[2:] - traj.times[:-2])[:, None]
    At = (A[2:] - A[:-2]) / dt
    mismatch = np.abs(At - phi[1:-1])[:, 1:-1]
    first = 1 if len(mismatch) > 2 and traj.times[0] == 0.0 else 0
    k, i = np.unravel_index(int(np.argmax(mismatch[first:])), mismatch[first:].shape)
    k += first
    steps = np.diff(traj.times)
    time_tol = tol_scale * 5.0 * (float(np.max(steps)) + traj.grid.dx**2)
    allowance = max(time_tol, base_tol)
    return EstimateReport.from_margin(
        "area-rate",
        allowance - float(mismatch[k, i]),
        0.0,
        (float(traj.grid.nodes[i + 1]), float(traj.times[k + 1])),
    )


def check_boundary_identities(
    traj: Trajectory, tol_scale: float = GCSF_TOL_SCALE
) -> EstimateReport:
    return combine_reports(
        "boundary-identities",
        [
            check_boundary_left(traj, tol_scale),
            check_boundary_right(traj, tol_scale),
            check_area_rate(traj, tol_scale),
        ],
    )


def _trapezoid_mass(u: ScalarField) -> float:
    return float(area_function(u).values[-1])


def check_gradient_bound(
    traj: Trajectory, tol_scale: float = GCSF_TOL_SCALE
) -> EstimateReport:
    """arctan(u_x) <= A / (2t) at every node and positive time"""
    tol = harnack_tolerance(traj, tol_scale)
    margin, witness = math.inf, (None, None)
    for t, u, left in zip(traj.times, traj.states, _left_masses(traj)):
        if t <= 0.0:
            continue
        s = harnack_state(u, float(t), left)
        # 2t arctan(u_x) <= A is H + pi t >= 0 rescaled by 1/(2t)
        slack = s.A.values / (2.0 * t) - (s.phi.values - math.pi / 2.0)
        i = int(np.argmin(slack))
        if slack[i] < margin:
            margin, witness = float(slack[i]), (float(u.x[i]), float(t))
    if math.isinf(margin):
        return EstimateReport.inconclusive("gradient-bound", tol, "no positive times")
    return EstimateReport.from_margin("gradient-bound", margin, tol, witness)


def delayed_slope_constant(delta: float) -> float:
    """C(delta) = tan(pi / (4 (1 + delta)) + pi / 4) / 2"""
    if not delta > 0:
        raise DomainError(f"delta must be positive (got {delta})")
    return 0.5 * math.tan(math.pi / (4.0 * (1.0 + delta)) + math.pi / 4.0)


def check_slope_bound(
    traj: Trajectory,
    delta: float,
    a_bar: Optional[float] = None,
    tol_scale: float = GCSF_TOL_SCALE,
) -> EstimateReport:
    """u_x(y, t) <= 2 C(delta) for y <= 0 once t >= (1 + delta) A_bar / pi"""
    a_bar = float(traj.meta.get("a_bar", 0.0)) if a_bar is None else a_bar
    t_min = (1.0 + delta) * a_bar / math.pi
    bound = 2.0 * delayed_slope_constant(delta)
    sup_u = float(np.max(np.abs(traj.values())))
    dt = float(traj.meta.get("dt", 0.0))
    tol = check_tolerance(traj.grid.dx, dt, sup_u, tol_scale)
    margin, witness = math.inf, (None, None)
    for t, u in zip(traj.times, traj.states):
        if t <= 0.0 or t < t_min:
            continue
        left_half = u.x <= 0.0
        slope = np.gradient(u.values, u.grid.dx)[left_half]
        slack = bound - slope
        i = int(np.argmin(slack))
        if slack[i] < margin:
            margin, witness = float(slack[i]), (float(u.x[left_half][i]), float(t))
    if math.isinf(margin):
        return EstimateReport.inconclusive(
            "slope-bound", tol, "no snapshot after the delayed time", t_min=t_min
        )
    return EstimateReport.from_margin(
        "slope-bound", margin, tol, witness, bound=bound, t_min=t_min
    )


def check_area_growth(
    traj: Trajectory,
    t_range: Tuple[float, float] = (0.05, 0.3),
    relative_tol: float = RIGHT_EDGE_RELATIVE_TOL,
) -> EstimateReport:
    """Inner-grid L1 norm plus edge strip masses against A_bar + pi t

    Only snapshots inside t_range are checked. Polyline areas recorded by a
    local flow are reported next to the measured ones."""
    measured = [
        _trapezoid_mass(u) + left + right
        for u, (left, right) in zip(traj.states, _edge_masses(traj))
    ]
    polyline = traj.meta.get("full_masses")
    a_bar = float(traj.meta.get("a_bar", measured[0]))
    lo, hi = t_range
    margin, witness, rows = math.inf, (None, None), []
    for k, (t, area) in enumerate(zip(traj.times, measured)):
        if not lo <= t <= hi:
            continue
        expected = a_bar + math.pi * t
        slack = relative_tol * expected - abs(area - expected)
        row = {"t": float(t), "area": area, "expected": expected}
        if polyline is not None:
            row["polyline_area"] = float(polyline[k])
        rows.append(row)
        if slack < margin:
            margin, witness = slack, (None, float(t))
    if not rows:
        return EstimateReport.inconclusive(
            "area-growth", 0.0, "no snapshot inside the time range", t_range=t_range
        )
    return EstimateReport.from_margin(
        "area-growth", margin, 0.0, witness, a_bar=a_bar, values=rows
    )
