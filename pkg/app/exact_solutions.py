import math
from typing import Optional, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from app.core_types import Polyline
from app.lab_errors import DomainError

ArrayLike = Union[float, np.ndarray]

# Arguments of arccosh within this distance below 1 are treated as 1
_ARCCOSH_CLAMP = 1e-12


def _as_output(value: np.ndarray) -> ArrayLike:
    return float(value) if np.ndim(value) == 0 else value


# ----------------------------
# Grim Reaper
# ----------------------------


def grim_reaper(x: ArrayLike, t: float, L: float = 0.0, center: float = 0.0):
    """Translating solution y = L + pi*t/2 - (2/pi) log cos(pi*(x - center)/2)"""
    s = np.asarray(x, dtype=float) - center
    if np.any(np.abs(s) >= 1.0):
        raise DomainError("Grim Reaper is only defined for |x - center| < 1")
    y = L + math.pi * t / 2.0 - (2.0 / math.pi) * np.log(np.cos(math.pi * s / 2.0))
    return _as_output(y)


def grim_reaper_derivatives(
    x: ArrayLike, t: float, center: float = 0.0
) -> Tuple[ArrayLike, ArrayLike, ArrayLike]:
    """Analytic (u_t, u_x, u_xx) of the Grim Reaper"""
    s = np.asarray(x, dtype=float) - center
    if np.any(np.abs(s) >= 1.0):
        raise DomainError("Grim Reaper is only defined for |x - center| < 1")
    theta = math.pi * s / 2.0
    ut = np.full_like(s, math.pi / 2.0)
    ux = np.tan(theta)
    uxx = (math.pi / 2.0) / np.cos(theta) ** 2
    return _as_output(ut), _as_output(ux), _as_output(uxx)


def grim_reaper_residual(x: ArrayLike, t: float) -> ArrayLike:
    ut, ux, uxx = grim_reaper_derivatives(x, t)
    residual = np.asarray(ut) - np.asarray(uxx) / (1.0 + np.asarray(ux) ** 2)
    return _as_output(np.abs(residual))


def domination_envelope(x: ArrayLike, L: float, T: float):
    """Grim Reaper upper barrier for a local GCSF with sup u0 <= L, up to time T"""
    return grim_reaper(x, T, L)


def grim_reaper_pair(
    x: ArrayLike, t: float, gap: float = 0.0
) -> Tuple[ArrayLike, ArrayLike]:
    """Grim Reaper moving up and its reflection moving down, `gap` apart at x = 0"""
    upper = grim_reaper(x, t, gap / 2.0)
    return upper, _as_output(-np.asarray(upper))


# ----------------------------
# Angenent oval
# ----------------------------


def _arccosh_clamped(z: np.ndarray) -> np.ndarray:
    z = np.where((z < 1.0) & (z >= 1.0 - _ARCCOSH_CLAMP), 1.0, z)
    return np.log(z + np.sqrt(z * z - 1.0))


def angenent_oval_upper(
    x: float, s: float, vertical_shift: float = 0.0
) -> Optional[float]:
    if s >= 0:
        raise DomainError(f"Angenent oval needs s < 0 (got {s})")
    if abs(x) >= 1.0:
        return None
    z = math.exp(-(math.pi**2) * s / 4.0) * math.cos(math.pi * x / 2.0)
    if z < 1.0 - _ARCCOSH_CLAMP:
        return None
    return vertical_shift + (2.0 / math.pi) * float(_arccosh_clamped(np.array(z)))


def angenent_oval_profile(
    x: np.ndarray, s: float, vertical_shift: float = 0.0
) -> np.ndarray:
    """Vectorized upper branch; NaN outside the oval width"""
    if s >= 0:
        raise DomainError(f"Angenent oval needs s < 0 (got {s})")
    x = np.asarray(x, dtype=float)
    c = math.exp(-(math.pi**2) * s / 4.0)
    z = c * np.cos(math.pi * np.clip(x, -1.0, 1.0) / 2.0)
    defined = (np.abs(x) < 1.0) & (z >= 1.0 - _ARCCOSH_CLAMP)
    y = np.full_like(x, np.nan)
    y[defined] = vertical_shift + (2.0 / math.pi) * _arccosh_clamped(z[defined])
    return y


def angenent_oval_half_width(s: float) -> float:
    if s >= 0:
        raise DomainError(f"Angenent oval needs s < 0 (got {s})")
    return (2.0 / math.pi) * math.acos(math.exp(math.pi**2 * s / 4.0))


def oval_grim_reaper_shift(s: float) -> float:
    """L such that the upper branch approaches -grim_reaper(x, 0, L) as s -> -inf"""
    return math.pi * s / 2.0 - (2.0 / math.pi) * math.log(2.0)


def angenent_oval(s: float, m: int = 256, vertical_shift: float = 0.0) -> Polyline:
    """Closed oval sampled at m equally spaced polar angles about its center"""
    if s >= 0:
        raise DomainError(f"Angenent oval needs s < 0 (got {s})")
    c = math.exp(-(math.pi**2) * s / 4.0)
    height = (2.0 / math.pi) * math.acosh(c)

    def level(r: float, cos_a: float, sin_a: float) -> float:
        return math.cosh(math.pi * r * sin_a / 2.0) - c * math.cos(
            math.pi * r * cos_a / 2.0
        )

    vertices = []
    for angle in 2.0 * math.pi * np.arange(m) / m:
        cos_a, sin_a = math.cos(angle), math.sin(angle)
        bounds = []
        if abs(cos_a) > 1e-15:
            bounds.append(1.0 / abs(cos_a))
        if abs(sin_a) > 1e-15:
            bounds.append(height / abs(sin_a))
        r_hi = min(bounds)
        r = r_hi if level(r_hi, cos_a, sin_a) <= 0.0 else brentq(
            level, 0.0, r_hi, args=(cos_a, sin_a), xtol=1e-14
        )
        vertices.append((r * cos_a, vertical_shift + r * sin_a))
    return Polyline(np.array(vertices), closed=True)


# ----------------------------
# Shrinking circle
# ----------------------------


def shrinking_circle(
    center: Tuple[float, float], r0: float, t: float, m: int = 256
) -> Optional[Polyline]:
    if r0 <= 0:
        raise DomainError(f"Circle radius must be positive (got {r0})")
    r_squared = r0 * r0 - 2.0 * t
    if r_squared <= 0.0:
        return None
    radius = math.sqrt(r_squared)
    angle = 2.0 * math.pi * np.arange(m) / m
    vertices = np.column_stack(
        (center[0] + radius * np.cos(angle), center[1] + radius * np.sin(angle))
    )
    return Polyline(vertices, closed=True)


def circle_radius(r0: float, t: float) -> Optional[float]:
    r_squared = r0 * r0 - 2.0 * t
    return math.sqrt(r_squared) if r_squared > 0.0 else None
