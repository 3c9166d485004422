import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_banded

from app.core_types import (
    EstimateReport,
    Grid1D,
    ScalarField,
    Trajectory,
    sample_linear,
    trajectory_tolerance,
)
from app.env import GCSF_DT_RAMP_STEPS, GCSF_SOLVER_THETA, GCSF_TOL_SCALE
from app.flow_callbacks import notify_finish, notify_snapshot
from app.lab_errors import DomainError, SolverDivergenceError

logger = logging.getLogger(__name__)

BC_DIRICHLET_FIXED = "dirichlet-fixed"
BC_DIRICHLET_ORACLE = "dirichlet-oracle"
BC_ZERO = "zero"
BC_KINDS = (BC_DIRICHLET_FIXED, BC_DIRICHLET_ORACLE, BC_ZERO)

# Face slopes below this use the series 1 - v^2/3 for arctan(v)/v
_SMALL_SLOPE = 1e-4

# A final sub-step shorter than this fraction of dt is merged into the previous one
_MERGE_FRACTION = 1e-3

# ----------------------------
# Options
# ----------------------------


@dataclass(frozen=True)
class BoundaryCondition:
    kind: str = BC_DIRICHLET_FIXED
    # (x, t) -> boundary value, only for dirichlet-oracle
    oracle: Optional[Callable[[float, float], float]] = None

    def __post_init__(self):
        if self.kind not in BC_KINDS:
            raise DomainError(f"Unknown boundary condition kind: {self.kind}")
        if (self.kind == BC_DIRICHLET_ORACLE) != (self.oracle is not None):
            raise DomainError("An oracle is required exactly for dirichlet-oracle")

    def endpoint_values(self, u: ScalarField, t: float) -> Tuple[float, float]:
        if self.kind == BC_ZERO:
            return 0.0, 0.0
        if self.kind == BC_DIRICHLET_ORACLE:
            return (
                float(self.oracle(u.grid.left, t)),
                float(self.oracle(u.grid.right, t)),
            )
        return float(u.values[0]), float(u.values[-1])


@dataclass(frozen=True)
class SolverOptions:
    dt_max: float
    theta: float = GCSF_SOLVER_THETA
    bc: BoundaryCondition = field(default_factory=BoundaryCondition)
    snapshot_times: Tuple[float, ...] = ()
    ramp_steps: int = GCSF_DT_RAMP_STEPS
    # Cap dt so that theta < 1 steps stay order preserving
    monotone: bool = True

    def __post_init__(self):
        if not self.dt_max > 0:
            raise DomainError(f"dt_max must be positive (got {self.dt_max})")
        if not 0.5 <= self.theta <= 1.0:
            raise DomainError(f"theta must lie in [1/2, 1] (got {self.theta})")
        if self.ramp_steps < 0:
            raise DomainError(f"ramp_steps must be >= 0 (got {self.ramp_steps})")
        object.__setattr__(
            self, "snapshot_times", tuple(float(t) for t in self.snapshot_times)
        )


# ----------------------------
# Time stepping
# ----------------------------


def face_coefficients(v: np.ndarray) -> np.ndarray:
    """arctan(v)/v, the secant slope of the arctan flux (1 at v = 0)"""
    v = np.asarray(v, dtype=float)
    small = np.abs(v) < _SMALL_SLOPE
    safe = np.where(small, 1.0, v)
    return np.where(small, 1.0 - v * v / 3.0, np.arctan(safe) / safe)


def step(
    u: ScalarField,
    dt: float,
    bc: BoundaryCondition,
    *,
    t: float = 0.0,
    theta: float = GCSF_SOLVER_THETA,
) -> ScalarField:
    """One theta step of u_t = (arctan u_x)_x from time t to t + dt

    The flux is linearized as b(v) * u_x with b frozen at the old level."""
    if not dt > 0:
        raise DomainError(f"dt must be positive (got {dt})")
    values = u.values
    dx = u.grid.dx
    r = dt / (dx * dx)

    diff = np.diff(values)
    b = face_coefficients(diff / dx)
    b_minus, b_plus = b[:-1], b[1:]

    diag = 1.0 + theta * r * (b_minus + b_plus)
    lower = -theta * r * b_minus
    upper = -theta * r * b_plus
    if not np.all(diag > np.abs(lower) + np.abs(upper)):
        raise RuntimeError("Tridiagonal system lost diagonal dominance")

    flux_jump = b_plus * diff[1:] - b_minus * diff[:-1]
    rhs = values[1:-1] + (1.0 - theta) * r * flux_jump
    left, right = bc.endpoint_values(u, t + dt)
    rhs[0] -= lower[0] * left
    rhs[-1] -= upper[-1] * right

    banded = np.zeros((3, len(diag)))
    banded[0, 1:] = upper[:-1]
    banded[1, :] = diag
    banded[2, :-1] = lower[1:]
    interior = solve_banded((1, 1), banded, rhs)

    new_values = np.concatenate(([left], interior, [right]))
    if not np.all(np.isfinite(new_values)):
        raise SolverDivergenceError(t + dt)
    return u.with_values(new_values)


def snapshot_schedule(t_end: float, requested: Sequence[float]) -> List[float]:
    if not t_end > 0:
        raise DomainError(f"t_end must be positive (got {t_end})")
    for t in requested:
        if t < 0.0 or t > t_end * (1.0 + 1e-12):
            raise DomainError(f"Snapshot time {t} outside [0, {t_end}]")
    times = sorted({0.0, float(t_end), *(min(float(t), t_end) for t in requested)})
    return times


def time_steps(dx: float, opts: SolverOptions) -> Iterable[float]:
    """Step sizes growing geometrically from dx^2 to min(dt_max, dx)"""
    target = min(opts.dt_max, dx)
    if opts.monotone and opts.theta < 1.0:
        target = min(target, dx * dx / (2.0 * (1.0 - opts.theta)))
    start = min(dx * dx, target)
    k = 0
    while True:
        if k < opts.ramp_steps:
            yield start * (target / start) ** (k / opts.ramp_steps)
        else:
            yield target
        k += 1


def solve(u0: ScalarField, t_end: float, opts: SolverOptions) -> Trajectory:
    schedule = snapshot_schedule(t_end, opts.snapshot_times)
    steps = time_steps(u0.grid.dx, opts)
    t, u = 0.0, u0
    states, step_count = [u0], 0
    notify_snapshot("gcsf", 0.0, u0)
    for target in schedule[1:]:
        while t < target:
            dt = next(steps)
            remaining = target - t
            if dt >= remaining * (1.0 - _MERGE_FRACTION):
                dt = remaining
            u = step(u, dt, opts.bc, t=t, theta=opts.theta)
            step_count += 1
            t = target if dt == remaining else t + dt
        states.append(u)
        notify_snapshot("gcsf", t, u)
        logger.debug(f"GCSF snapshot t={t:.6g} after {step_count} steps")
    traj = Trajectory(
        schedule,
        tuple(states),
        {
            "solver": "gcsf",
            "theta": opts.theta,
            "bc": opts.bc.kind,
            "steps": step_count,
            "dt": next(time_steps(u0.grid.dx, replace(opts, ramp_steps=0))),
        },
    )
    logger.info(
        f"GCSF solve finished: n={u0.grid.n}, t_end={t_end}, {step_count} steps"
    )
    notify_finish("gcsf", traj)
    return traj


# ----------------------------
# Transforms and diagnostics
# ----------------------------


def rescale(traj: Trajectory, rho: float) -> Trajectory:
    """u^rho(x, t) = u(rho x, rho^2 t) / rho, resampled on the same grid"""
    if not 0.0 < rho <= 1.0:
        raise DomainError(f"rho must lie in (0, 1] (got {rho})")
    grid = traj.grid
    if not grid.left <= 0.0 <= grid.right:
        raise DomainError("Rescaling needs a grid containing x = 0")
    if rho == 1.0:
        return traj
    x = rho * grid.nodes
    states = tuple(s.with_values(sample_linear(s, x) / rho) for s in traj.states)
    return Trajectory(traj.times / (rho * rho), states, {**traj.meta, "rho": rho})


def rescale_field(u: ScalarField, rho: float) -> ScalarField:
    return rescale(Trajectory([0.0], (u,)), rho).states[0]


def pde_residual(traj: Trajectory) -> float:
    """Max centered-difference residual of u_t = u_xx / (1 + u_x^2)"""
    if len(traj) < 3:
        raise DomainError("PDE residual needs at least 3 snapshots")
    u = traj.values()
    dx = traj.grid.dx
    dt = (traj.times[2:] - traj.times[:-2])[:, None]
    ut = (u[2:, 1:-1] - u[:-2, 1:-1]) / dt
    mid = u[1:-1]
    ux = (mid[:, 2:] - mid[:, :-2]) / (2.0 * dx)
    uxx = (mid[:, 2:] - 2.0 * mid[:, 1:-1] + mid[:, :-2]) / (dx * dx)
    return float(np.max(np.abs(ut - uxx / (1.0 + ux * ux))))


def sample_trajectory(
    fn: Callable[[np.ndarray, float], np.ndarray], grid: Grid1D, times: Sequence[float]
) -> Trajectory:
    """Trajectory sampled from a closed-form solution fn(x, t)"""
    states = tuple(ScalarField(grid, fn(grid.nodes, float(t))) for t in times)
    return Trajectory(times, states, {"solver": "exact"})


def padded_grid(
    support: Tuple[float, float], dx: float, widths: float = 4.0
) -> Grid1D:
    """Grid padded by `widths` support-widths on each side of compact data"""
    a, b = support
    if not b > a:
        raise DomainError(f"Empty support ({a}, {b})")
    pad = widths * (b - a)
    return Grid1D.with_spacing(a - pad, b + pad, dx)


def max_error(
    traj: Trajectory, exact: Callable[[np.ndarray, float], np.ndarray]
) -> float:
    return max(
        float(np.max(np.abs(s.values - exact(s.x, float(t)))))
        for t, s in zip(traj.times, traj.states)
    )


def observed_orders(errors: Sequence[float]) -> List[float]:
    """log2 ratios of errors on successively doubled grids"""
    return [
        math.log2(coarse / fine) if fine > 0 else math.inf
        for coarse, fine in zip(errors[:-1], errors[1:])
    ]


def check_max_principle(
    traj: Trajectory, tol_scale: float = GCSF_TOL_SCALE
) -> EstimateReport:
    """u(t) stays between the extremes of u0 and the boundary values"""
    values = traj.values()
    edges = values[:, [0, -1]]
    upper = max(float(np.max(values[0])), float(np.max(edges)))
    lower = min(float(np.min(values[0])), float(np.min(edges)))
    slack = np.minimum(upper - values, values - lower)
    k, i = np.unravel_index(int(np.argmin(slack)), slack.shape)
    return EstimateReport.from_margin(
        "max-principle",
        float(slack[k, i]),
        trajectory_tolerance(traj, tol_scale=tol_scale),
        (float(traj.grid.nodes[i]), float(traj.times[k])),
    )


def check_comparison(
    lower: Trajectory, upper: Trajectory, tol_scale: float = GCSF_TOL_SCALE
) -> EstimateReport:
    """Ordered data stay ordered: min over snapshots and nodes of upper - lower"""
    if lower.grid != upper.grid or not np.allclose(lower.times, upper.times):
        raise DomainError("Comparison needs a shared grid and snapshot times")
    gap = upper.values() - lower.values()
    if float(np.min(gap[0])) < 0.0:
        raise DomainError("Initial data are not ordered")
    k, i = np.unravel_index(int(np.argmin(gap)), gap.shape)
    return EstimateReport.from_margin(
        "comparison",
        float(gap[k, i]),
        trajectory_tolerance(upper, tol_scale=tol_scale),
        (float(lower.grid.nodes[i]), float(lower.times[k])),
    )
