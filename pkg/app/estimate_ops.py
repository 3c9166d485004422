import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.integrate import quad

from app.core_types import (
    EstimateReport,
    Grid1D,
    Interval,
    ScalarField,
    Trajectory,
    check_tolerance,
    integrate,
    l1_norm,
    lp_norm,
    sample_linear,
    trajectory_tolerance,
)
from app.env import GCSF_TOL_SCALE
from app.gcsf_ops import BC_ZERO, BoundaryCondition, SolverOptions, solve
from app.harnack_ops import delayed_slope_constant
from app.lab_errors import DomainError

logger = logging.getLogger(__name__)

# Tolerance on |m(k) - t| when bisecting for the truncation level
TRUNCATION_TOL = 1e-10

# ----------------------------
# Constants and closed-form bounds
# ----------------------------


def magic_time(A_bar: float) -> float:
    """t* = A_bar / pi"""
    if A_bar < 0:
        raise DomainError(f"A_bar must be >= 0 (got {A_bar})")
    return A_bar / math.pi


def delayed_constant(delta: float) -> Tuple[float, float]:
    """(C(delta), (1 + delta) / delta); the first never exceeds the second"""
    c = delayed_slope_constant(delta)
    over_bound = (1.0 + delta) / delta
    if c > over_bound * (1.0 + 1e-12):
        raise RuntimeError(f"C({delta})={c} exceeds its over-bound {over_bound}")
    return c, over_bound


def delayed_constant_time_form(t: float, t_star: float) -> Tuple[float, float]:
    """(C(delta_t), t / (t - t*)) with delta_t = (t - t*) / t*"""
    if not t > t_star > 0:
        raise DomainError(f"Need t > t* > 0 (got t={t}, t*={t_star})")
    c, _ = delayed_constant((t - t_star) / t_star)
    return c, t / (t - t_star)


def delayed_height_bound(delta: float, A_bar: float, t: float) -> float:
    return delayed_constant(delta)[0] + A_bar / 2.0 + math.pi * t / 2.0


def global_height_bound(A: float, t: float) -> float:
    """sqrt(t) * sqrt(2A / (t - t*)) for t > t*; infinite at or before t*"""
    t_star = magic_time(A)
    if t <= t_star:
        return math.inf
    return math.sqrt(t) * math.sqrt(2.0 * A / (t - t_star))


def truncation_bound(norm_p: float, p: float, t: float) -> float:
    """norm_p^(p/(p-1)) / t^(1/(p-1)), the upper bound on the truncation level"""
    return norm_p ** (p / (p - 1.0)) / t ** (1.0 / (p - 1.0))


def lp_height_bound(
    p: float, norm_p: float, t: float, a: Optional[float] = None
) -> float:
    """Two-branch Lp-to-height bound at x = 0 with 1 + delta' = pi

    a is the L1 norm on (-1, 1); without it both branches are evaluated, with
    a replaced by its Holder bound 2^(1 - 1/p) norm_p, and the larger is used."""
    if p <= 1:
        raise DomainError(f"p must be > 1 (got {p})")
    if not t > 0:
        raise DomainError(f"t must be positive (got {t})")
    c, _ = delayed_constant(math.pi - 1.0)
    small = truncation_bound(norm_p, p, t) + c + t / 2.0 + math.pi * t / 2.0
    if a is None:
        holder = 2.0 ** (1.0 - 1.0 / p) * norm_p
        large = c + holder / 2.0 + math.pi * t / 2.0
        return max(large, small)
    if t >= a:
        return c + a / 2.0 + math.pi * t / 2.0
    return small


def local_mass_height_bound(r: float, mass: float, t: float) -> float:
    """C(pi - 1) r + mass / (2r) + pi t / (2r), valid once t >= mass"""
    if not r > 0:
        raise DomainError(f"r must be positive (got {r})")
    c, _ = delayed_constant(math.pi - 1.0)
    return c * r + mass / (2.0 * r) + math.pi * t / (2.0 * r)


def truncated_mass(u0: ScalarField, k: float) -> float:
    """Exact integral of (|u0| - k)^+ for the piecewise-linear interpolant of |u0|"""
    w = np.abs(u0.values) - k
    a, b = w[:-1], w[1:]
    dx = u0.grid.dx
    both = (a >= 0.0) & (b >= 0.0)
    mixed = (a > 0.0) != (b > 0.0)
    top = np.maximum(a, b)
    span = np.abs(a) + np.abs(b)
    safe = np.where(span > 0.0, span, 1.0)
    cells = np.where(both, dx * (a + b) / 2.0, 0.0)
    cells = cells + np.where(mixed & ~both, dx * top * top / (2.0 * safe), 0.0)
    return float(np.sum(cells))


def truncation_level(u0: ScalarField, t: float) -> float:
    """k with integral of (|u0| - k)^+ equal to t, by bisection"""
    total = truncated_mass(u0, 0.0)
    if not 0.0 < t < total:
        raise DomainError(f"Need 0 < t < ||u0||_1 = {total} (got {t})")
    lo, hi = 0.0, float(np.max(np.abs(u0.values)))
    k = 0.5 * (lo + hi)
    for _ in range(200):
        k = 0.5 * (lo + hi)
        gap = truncated_mass(u0, k) - t
        if abs(gap) <= TRUNCATION_TOL:
            break
        if gap > 0.0:
            lo = k
        else:
            hi = k
    return k


# ----------------------------
# Height checks
# ----------------------------


def _unit_interval_mass(u0: ScalarField) -> float:
    sub = (max(-1.0, u0.grid.left), min(1.0, u0.grid.right))
    return l1_norm(u0, sub)


def _a_bar(traj: Trajectory, A_bar: Optional[float]) -> float:
    if A_bar is not None:
        return A_bar
    if "a_bar" in traj.meta:
        return float(traj.meta["a_bar"])
    return _unit_interval_mass(traj.states[0])


def check_delayed_height(
    traj: Trajectory,
    delta: float,
    A_bar: Optional[float] = None,
    x0: float = 0.0,
    tol_scale: float = GCSF_TOL_SCALE,
) -> EstimateReport:
    """|u(x0, t)| <= C(delta) + A_bar/2 + pi t/2 for t >= (1 + delta) t*"""
    a_bar = _a_bar(traj, A_bar)
    t_min = (1.0 + delta) * magic_time(a_bar)
    c, over_bound = delayed_constant(delta)
    rows = [
        (float(t), s)
        for t, s in zip(traj.times, traj.states)
        if t > 0.0 and t >= t_min * (1.0 - 1e-12)
    ]
    if not rows:
        return EstimateReport.inconclusive(
            "delayed-height", 0.0, "no snapshot after the delayed time", t_min=t_min
        )
    sup_u = max(float(np.max(np.abs(s.values))) for _, s in rows)
    tol = trajectory_tolerance(traj, sup_u, tol_scale)
    margin, witness = math.inf, (x0, None)
    for t, s in rows:
        slack = c + a_bar / 2.0 + math.pi * t / 2.0 - abs(sample_linear(s, x0))
        if slack < margin:
            margin, witness = slack, (x0, t)
    return EstimateReport.from_margin(
        "delayed-height",
        margin,
        tol,
        witness,
        constant=c,
        over_bound=over_bound,
        a_bar=a_bar,
        t_min=t_min,
    )


def check_global_height(
    traj: Trajectory, tol_scale: float = GCSF_TOL_SCALE
) -> EstimateReport:
    """u(t) <= sqrt(t) sqrt(2A / (t - t*)) at every node for t > t*"""
    u0 = traj.states[0]
    if float(np.min(u0.values)) < -1e-12:
        raise DomainError("Global height bound needs u0 >= 0")
    A = l1_norm(u0)
    t_star = magic_time(A)
    rows = [(float(t), s) for t, s in zip(traj.times, traj.states) if t > t_star]
    if not rows:
        return EstimateReport.inconclusive(
            "global-height", 0.0, "no snapshot after t*", t_star=t_star
        )
    sup_u = max(float(np.max(np.abs(s.values))) for _, s in rows)
    tol = trajectory_tolerance(traj, sup_u, tol_scale)
    margin, witness = math.inf, (None, None)
    for t, s in rows:
        slack = global_height_bound(A, t) - s.values
        i = int(np.argmin(slack))
        if slack[i] < margin:
            margin, witness = float(slack[i]), (float(s.x[i]), t)
    return EstimateReport.from_margin(
        "global-height", margin, tol, witness, mass=A, t_star=t_star
    )


def check_lp_height(
    traj: Trajectory, p: float, tol_scale: float = GCSF_TOL_SCALE
) -> EstimateReport:
    """|u(0, t)| against the two-branch Lp bound at every positive snapshot"""
    u0 = traj.states[0]
    sub = (max(-1.0, u0.grid.left), min(1.0, u0.grid.right))
    norm_p = lp_norm(u0, p, sub)
    a = l1_norm(u0, sub)
    rows = [(float(t), s) for t, s in zip(traj.times, traj.states) if t > 0.0]
    if not rows:
        return EstimateReport.inconclusive("lp-height", 0.0, "no positive times")
    sup_u = max(float(np.max(np.abs(s.values))) for _, s in rows)
    tol = trajectory_tolerance(traj, sup_u, tol_scale)
    margin, witness, implied = math.inf, (0.0, None), 0.0
    for t, s in rows:
        height = abs(sample_linear(s, 0.0))
        slack = lp_height_bound(p, norm_p, t, a) - height
        implied = max(implied, height / (1.0 + truncation_bound(norm_p, p, t) + t))
        if slack < margin:
            margin, witness = slack, (0.0, t)
    return EstimateReport.from_margin(
        "lp-height", margin, tol, witness, p=p, norm_p=norm_p, implied_constant=implied
    )


def check_local_mass_height(
    traj: Trajectory, y: float, r: float, tol_scale: float = GCSF_TOL_SCALE
) -> EstimateReport:
    """Scaled interior height bound on (y - r, y + r) once t >= its initial mass"""
    mass = l1_norm(traj.states[0], (y - r, y + r))
    rows = [
        (float(t), s)
        for t, s in zip(traj.times, traj.states)
        if t > 0.0 and t >= mass
    ]
    if not rows:
        return EstimateReport.inconclusive(
            "local-mass-height", 0.0, "no snapshot after the local mass", mass=mass
        )
    sup_u = max(float(np.max(np.abs(s.values))) for _, s in rows)
    tol = trajectory_tolerance(traj, sup_u, tol_scale)
    margin, witness = math.inf, (y, None)
    for t, s in rows:
        slack = local_mass_height_bound(r, mass, t) - abs(sample_linear(s, y))
        if slack < margin:
            margin, witness = slack, (y, t)
    return EstimateReport.from_margin(
        "local-mass-height", margin, tol, witness, r=r, mass=mass
    )


# ----------------------------
# Mass drift and separation
# ----------------------------


def drift_constant(phi: ScalarField) -> float:
    """C(phi) = (pi/2) * total variation of phi"""
    return math.pi / 2.0 * float(np.sum(np.abs(np.diff(phi.values))))


def _on_grid(phi: ScalarField, grid: Grid1D) -> np.ndarray:
    if abs(phi.values[0]) > 1e-12 or abs(phi.values[-1]) > 1e-12:
        raise DomainError("Test function must vanish at the ends of its support")
    if not grid.contains(phi.grid.left, phi.grid.right):
        raise DomainError("Test function support must lie inside the grid")
    return np.interp(grid.nodes, phi.x, phi.values, left=0.0, right=0.0)


def weighted_integrals(traj: Trajectory, phi: ScalarField) -> np.ndarray:
    weights = _on_grid(phi, traj.grid)
    return np.array([integrate(s.with_values(weights * s.values)) for s in traj.states])


def check_mass_drift(
    traj: Trajectory, phi: ScalarField, tol_scale: float = GCSF_TOL_SCALE
) -> EstimateReport:
    """|I(t) - I(s)| <= C(phi) (t - s) for all snapshot pairs, I = integral phi u"""
    c = drift_constant(phi)
    values = weighted_integrals(traj, phi)
    times = traj.times
    later = np.abs(traj.values()[1:]) if len(traj) > 1 else np.abs(traj.values())
    tol = trajectory_tolerance(traj, float(np.max(later)), tol_scale)
    i, j = np.triu_indices(len(times), 1)
    slack = c * (times[j] - times[i]) - np.abs(values[j] - values[i])
    if len(slack) == 0:
        return EstimateReport.inconclusive("mass-drift", tol, "single snapshot")
    worst = int(np.argmin(slack))
    return EstimateReport.from_margin(
        "mass-drift",
        float(slack[worst]),
        tol,
        (None, float(times[j[worst]])),
        constant=c,
        s=float(times[i[worst]]),
    )


def cutoff_weights(grid: Grid1D, r: float, R: float) -> np.ndarray:
    """1 on (-r, r), linear down to 0 at -R and R"""
    x = np.abs(grid.nodes)
    return np.clip((R - x) / (R - r), 0.0, 1.0)


def _check_pair(traj1: Trajectory, traj2: Trajectory) -> None:
    if traj1.grid != traj2.grid:
        raise DomainError("Trajectories must share one grid")
    if len(traj1) != len(traj2) or not np.allclose(traj1.times, traj2.times):
        raise DomainError("Trajectories must share snapshot times")


def separation_norms(
    traj1: Trajectory, traj2: Trajectory, p: float, weights: Optional[np.ndarray] = None
) -> np.ndarray:
    _check_pair(traj1, traj2)
    out = []
    for s1, s2 in zip(traj1.states, traj2.states):
        diff = s1.values - s2.values
        if weights is not None:
            diff = diff * weights
        out.append(lp_norm(s1.with_values(diff), p))
    return np.array(out)


def check_l1_separation(
    traj1: Trajectory,
    traj2: Trajectory,
    r: float,
    R: float,
    p: float = 1.0,
    delta: float = 0.1,
    tol_scale: float = GCSF_TOL_SCALE,
) -> EstimateReport:
    """Cut-off Lp separation grows at most 2 pi (1 + delta) p / (R - r)^(1 - 1/p)"""
    _check_pair(traj1, traj2)
    grid = traj1.grid
    if not 0.0 < r < R or not grid.contains(-R, R):
        raise DomainError(f"Need 0 < r < R with (-R, R) inside the grid (r={r}, R={R})")
    if p < 1:
        raise DomainError(f"p must be >= 1 (got {p})")
    rate = 2.0 * math.pi * (1.0 + delta) * p / (R - r) ** (1.0 - 1.0 / p)
    norms = separation_norms(traj1, traj2, p, cutoff_weights(grid, r, R))
    sup_u = max(
        float(np.max(np.abs(traj1.values()))), float(np.max(np.abs(traj2.values())))
    )
    tol = trajectory_tolerance(traj1, sup_u, tol_scale)
    times = traj1.times
    i, j = np.triu_indices(len(times), 1)
    if len(i) == 0:
        return EstimateReport.inconclusive("l1-separation", tol, "single snapshot")
    slack = rate * (times[j] - times[i]) - (norms[j] - norms[i])
    reports = {"rate": rate}
    if p == 1.0:
        plain = separation_norms(traj1, traj2, 1.0, _inside(grid, R))
        clean = 2.0 * math.pi * (times[j] - times[i]) - (plain[j] - plain[i])
        slack = np.minimum(slack, clean)
        reports["clean_rate"] = 2.0 * math.pi
    worst = int(np.argmin(slack))
    return EstimateReport.from_margin(
        "l1-separation",
        float(slack[worst]),
        tol,
        (None, float(times[j[worst]])),
        s=float(times[i[worst]]),
        **reports,
    )


def _inside(grid: Grid1D, R: float) -> np.ndarray:
    return (np.abs(grid.nodes) <= R * (1.0 + 1e-12)).astype(float)


def separation_rate(traj1: Trajectory, traj2: Trajectory, sub: Interval) -> float:
    """Least-squares slope of ||u1(t) - u2(t)||_L1(sub) against t"""
    _check_pair(traj1, traj2)
    norms = [
        l1_norm(s1.with_values(s1.values - s2.values), sub)
        for s1, s2 in zip(traj1.states, traj2.states)
    ]
    slope, _ = np.polyfit(traj1.times, norms, 1)
    return float(slope)


# ----------------------------
# Sharpness experiment
# ----------------------------


def mollifier(x: np.ndarray) -> np.ndarray:
    """exp(-1 / (1 - x^2)) on (-1, 1), zero elsewhere, unnormalized"""
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) < 1.0
    safe = np.where(inside, x, 0.0)
    return np.where(inside, np.exp(-1.0 / (1.0 - safe * safe)), 0.0)


_MOLLIFIER_MASS = quad(lambda x: float(mollifier(np.array(x))), -1.0, 1.0)[0]


def unit_spike(n: float) -> Callable[[np.ndarray], np.ndarray]:
    """x -> n psi(n x) with psi the unit-mass mollifier"""
    return lambda x: n * mollifier(n * np.asarray(x, dtype=float)) / _MOLLIFIER_MASS


@dataclass(frozen=True)
class SpikeFamilySpec:
    n_values: Tuple[int, ...] = (4, 8, 16, 32, 64)
    probe_times: Tuple[float, ...] = ()
    half_width: float = 8.0
    dx: float = 0.002
    dt_max: float = 0.002
    profile: Callable[[float], Callable[[np.ndarray], np.ndarray]] = unit_spike

    def __post_init__(self):
        if not self.n_values or any(n <= 0 for n in self.n_values):
            raise DomainError("n_values must be positive")
        if any(t < 0 for t in self.probe_times):
            raise DomainError("probe_times must be >= 0")

    def times(self) -> Tuple[float, ...]:
        if self.probe_times:
            return tuple(sorted(set(self.probe_times)))
        t_star = magic_time(1.0)
        ladder = [f * t_star for f in (0.5, 0.8, 1.2, 2.0, 4.0)]
        return tuple(sorted({0.1, 2.0 / math.pi, *ladder}))


@dataclass
class SharpnessResult:
    rows: List[Dict[str, Any]]
    trends: Dict[str, Any]
    trajectories: Dict[int, Trajectory] = field(default_factory=dict, repr=False)

    columns = ("n", "t", "height", "bound", "passed_when_applicable")

    def table(self) -> List[Tuple[Any, ...]]:
        return [tuple(row[c] for c in self.columns) for row in self.rows]


def spike_trajectory(spec: SpikeFamilySpec, n: int) -> Trajectory:
    grid = Grid1D.with_spacing(-spec.half_width, spec.half_width, spec.dx)
    u0 = ScalarField.from_function(grid, spec.profile(n))
    times = spec.times()
    opts = SolverOptions(
        dt_max=spec.dt_max, bc=BoundaryCondition(BC_ZERO), snapshot_times=times
    )
    return solve(u0, max(times), opts)


def sharpness_experiment(
    spec: SpikeFamilySpec, below: float = 0.1, above: float = 2.0 / math.pi
) -> SharpnessResult:
    rows: List[Dict[str, Any]] = []
    heights: Dict[float, List[float]] = {below: [], above: []}
    trajectories = {}
    for n in spec.n_values:
        traj = spike_trajectory(spec, n)
        trajectories[n] = traj
        a = _unit_interval_mass(traj.states[0])
        t_star = magic_time(a)
        for t, s in zip(traj.times, traj.states):
            height = sample_linear(s, 0.0)
            bound: Optional[float] = None
            passed: Optional[bool] = None
            if t > t_star:
                c, _ = delayed_constant_time_form(float(t), t_star)
                bound = c + a / 2.0 + math.pi * t / 2.0
                tol = check_tolerance(s.grid.dx, spec.dt_max, abs(height))
                passed = bool(abs(height) <= bound + tol)
            rows.append(
                {
                    "n": n,
                    "t": float(t),
                    "height": height,
                    "bound": bound,
                    "passed_when_applicable": passed,
                }
            )
            for probe in heights:
                if abs(t - probe) <= 1e-12 * max(1.0, probe):
                    heights[probe].append(height)
        logger.info(f"Spike n={n}: initial height {sample_linear(traj.states[0], 0.0)}")

    low, high = heights[below], heights[above]
    increasing = bool(np.all(np.diff(low) > 0.0)) if len(low) > 1 else False
    variation = (
        abs(high[-1] - high[-2]) / max(abs(high[-1]), 1e-300)
        if len(high) > 1
        else math.nan
    )
    trends = {
        "below_time": below,
        "above_time": above,
        "heights_below": low,
        "heights_above": high,
        "increasing_below": increasing,
        "relative_variation_above": variation,
        "stable_above": bool(variation < 0.1) if len(high) > 1 else False,
    }
    return SharpnessResult(rows, trends, trajectories)
