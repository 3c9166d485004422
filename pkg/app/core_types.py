import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, Optional, Tuple, Union

import numpy as np
from scipy.integrate import trapezoid

from app.env import GCSF_TOL_SCALE
from app.lab_errors import DegenerateGeometryError, DomainError

Interval = Tuple[float, float]

# Relative slack used when deciding whether a point lies inside a grid span
_SPAN_SLACK = 1e-12

# ----------------------------
# Value types
# ----------------------------


@dataclass(frozen=True)
class Grid1D:
    left: float
    right: float
    n: int

    def __post_init__(self):
        left, right, n = float(self.left), float(self.right), int(self.n)
        if not (math.isfinite(left) and math.isfinite(right)) or left >= right:
            raise DomainError(f"Grid needs left < right (got {left}, {right})")
        if n < 3:
            raise DomainError(f"Grid needs at least 3 nodes (got {n})")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "n", n)

    @classmethod
    def with_spacing(cls, left: float, right: float, dx: float) -> "Grid1D":
        return cls(left, right, int(round((right - left) / dx)) + 1)

    @property
    def dx(self) -> float:
        return (self.right - self.left) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.left + np.arange(self.n) * self.dx

    @property
    def span(self) -> Interval:
        return self.left, self.right

    def contains(self, a: float, b: Optional[float] = None) -> bool:
        slack = _SPAN_SLACK * (self.right - self.left)
        b = a if b is None else b
        return self.left - slack <= a and b <= self.right + slack


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n,):
            raise DomainError(
                f"Field has {values.shape} values for a grid of {self.grid.n} nodes"
            )
        if not np.all(np.isfinite(values)):
            raise DomainError("Field values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(
        cls, grid: Grid1D, fn: Callable[[np.ndarray], np.ndarray]
    ) -> "ScalarField":
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float))

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)


@dataclass(frozen=True, eq=False)
class Polyline:
    vertices: np.ndarray
    closed: bool = False

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 2 or len(vertices) < 2:
            raise DomainError("Polyline needs an (m, 2) vertex array with m >= 2")
        if not np.all(np.isfinite(vertices)):
            raise DomainError("Polyline vertices must be finite")
        vertices.flags.writeable = False
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "closed", bool(self.closed))
        if np.any(self.chord_lengths() == 0.0):
            raise DegenerateGeometryError("Polyline has repeated consecutive vertices")

    @property
    def x(self) -> np.ndarray:
        return self.vertices[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.vertices[:, 1]

    def __len__(self) -> int:
        return len(self.vertices)

    def segments(self) -> Tuple[np.ndarray, np.ndarray]:
        """Start and end points of every edge, the closing edge included"""
        if self.closed:
            return self.vertices, np.roll(self.vertices, -1, axis=0)
        return self.vertices[:-1], self.vertices[1:]

    def chord_lengths(self) -> np.ndarray:
        start, end = self.segments()
        return np.hypot(*(end - start).T)

    def length(self) -> float:
        return float(np.sum(self.chord_lengths()))

    def enclosed_area(self) -> float:
        if not self.closed:
            raise DomainError("Enclosed area is only defined for closed polylines")
        x, y = self.x, self.y
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: Tuple[Union[ScalarField, Polyline], ...]
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        states = tuple(self.states)
        if times.ndim != 1 or len(times) == 0 or len(times) != len(states):
            raise DomainError("Trajectory needs one state per time")
        if np.any(np.diff(times) <= 0.0):
            raise DomainError("Trajectory times must be strictly increasing")
        if isinstance(states[0], ScalarField):
            grid = states[0].grid
            if any(
                not isinstance(s, ScalarField) or s.grid != grid for s in states
            ):
                raise DomainError("All field snapshots must share one grid")
        times.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "meta", dict(self.meta))

    def __len__(self) -> int:
        return len(self.times)

    @property
    def is_field(self) -> bool:
        return isinstance(self.states[0], ScalarField)

    @property
    def grid(self) -> Grid1D:
        if not self.is_field:
            raise DomainError("Polyline trajectories have no grid")
        return self.states[0].grid

    def values(self) -> np.ndarray:
        return np.vstack([s.values for s in self.states])

    def index_of(self, t: float, atol: float = 1e-12) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > atol * max(1.0, abs(t)):
            raise DomainError(f"No snapshot at t={t}")
        return i

    def with_meta(self, **meta) -> "Trajectory":
        return Trajectory(self.times, self.states, {**self.meta, **meta})


@dataclass(frozen=True)
class EstimateReport:
    name: str
    passed: bool
    margin: float
    tolerance: float
    witness_x: Optional[float] = None
    witness_t: Optional[float] = None
    status: str = "pass"
    details: Dict[str, Any] = field(default_factory=dict, hash=False)

    @classmethod
    def from_margin(
        cls,
        name: str,
        margin: float,
        tolerance: float,
        witness: Tuple[Optional[float], Optional[float]] = (None, None),
        **details,
    ) -> "EstimateReport":
        margin = float(margin)
        passed = bool(margin >= -tolerance)
        return cls(
            name=name,
            passed=passed,
            margin=margin,
            tolerance=float(tolerance),
            witness_x=None if witness[0] is None else float(witness[0]),
            witness_t=None if witness[1] is None else float(witness[1]),
            status="pass" if passed else "fail",
            details=details,
        )

    @classmethod
    def inconclusive(cls, name: str, tolerance: float, reason: str, **details):
        return cls(
            name=name,
            passed=False,
            margin=math.nan,
            tolerance=float(tolerance),
            status="inconclusive",
            details={"reason": reason, **details},
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "status": self.status,
            "margin": None if math.isnan(self.margin) else self.margin,
            "witness": {"x": self.witness_x, "t": self.witness_t},
            "tolerances": {"tol": self.tolerance},
            "details": _jsonable(self.details),
        }


def combine_reports(name: str, reports: Iterable[EstimateReport]) -> EstimateReport:
    """All-of combination; the margin is the worst slack relative to each tolerance"""
    reports = list(reports)
    checks = [r.to_dict() for r in reports]
    conclusive = [r for r in reports if r.status != "inconclusive"]
    if not conclusive:
        return EstimateReport.inconclusive(
            name, 0.0, "no conclusive sub-checks", checks=checks
        )
    worst = min(conclusive, key=lambda r: r.margin + r.tolerance)
    return EstimateReport.from_margin(
        name,
        worst.margin + worst.tolerance,
        0.0,
        (worst.witness_x, worst.witness_t),
        checks=checks,
    )


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def check_tolerance(
    dx: float, dt: float, sup_u: float, tol_scale: float = GCSF_TOL_SCALE
) -> float:
    return tol_scale * max(1e-6, 10.0 * (dx + dt) * (1.0 + sup_u))


# ----------------------------
# Quadrature and interpolation
# ----------------------------


def _restrict(f: ScalarField, sub: Optional[Interval]) -> Tuple[np.ndarray, np.ndarray]:
    a, b = f.grid.span if sub is None else (float(sub[0]), float(sub[1]))
    if a > b:
        raise DomainError(f"Empty interval ({a}, {b})")
    if not f.grid.contains(a, b):
        raise DomainError(f"Interval ({a}, {b}) is outside the grid {f.grid.span}")
    x = f.x
    inside = (x > a) & (x < b)
    xs = np.concatenate(([a], x[inside], [b]))
    return xs, np.interp(xs, x, f.values)


def integrate(f: ScalarField, sub: Optional[Interval] = None) -> float:
    xs, vals = _restrict(f, sub)
    return float(trapezoid(vals, xs))


def l1_norm(f: ScalarField, sub: Optional[Interval] = None) -> float:
    xs, vals = _restrict(f, sub)
    return float(trapezoid(np.abs(vals), xs))


def lp_norm(f: ScalarField, p: float, sub: Optional[Interval] = None) -> float:
    if p < 1:
        raise DomainError(f"p must be >= 1 (got {p})")
    xs, vals = _restrict(f, sub)
    return float(trapezoid(np.abs(vals) ** p, xs)) ** (1.0 / p)


def sample_linear(f: ScalarField, x: Union[float, np.ndarray]):
    xq = np.asarray(x, dtype=float)
    if xq.size and not f.grid.contains(float(np.min(xq)), float(np.max(xq))):
        raise DomainError(f"Query point outside grid span {f.grid.span}")
    result = np.interp(xq, f.x, f.values)
    return float(result) if result.ndim == 0 else result


def trajectory_tolerance(
    traj: Trajectory,
    sup_u: Optional[float] = None,
    tol_scale: float = GCSF_TOL_SCALE,
) -> float:
    """check_tolerance with the solver dt recorded in meta, else the snapshot step"""
    steps = np.diff(traj.times)
    default_dt = float(np.min(steps)) if len(steps) else 0.0
    dt = float(traj.meta.get("dt", default_dt))
    if sup_u is None:
        sup_u = float(np.max(np.abs(traj.values()))) if traj.is_field else 0.0
    dx = traj.grid.dx if traj.is_field else 0.0
    return check_tolerance(dx, dt, sup_u, tol_scale)
