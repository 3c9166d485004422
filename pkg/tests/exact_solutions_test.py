import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from app.exact_solutions import (
    angenent_oval,
    angenent_oval_half_width,
    angenent_oval_profile,
    angenent_oval_upper,
    circle_radius,
    domination_envelope,
    grim_reaper,
    grim_reaper_pair,
    grim_reaper_residual,
    oval_grim_reaper_shift,
    shrinking_circle,
)
from app.lab_errors import DomainError


def test_grim_reaper_values():
    for x, t, L, expected in [
        (0.0, 0.0, 0.0, 0.0),
        (0.0, 1.0, 0.0, math.pi / 2.0),
        (0.0, 0.0, 2.0, 2.0),
        (0.5, 0.0, 0.0, -(2.0 / math.pi) * math.log(math.cos(math.pi / 4.0))),
    ]:
        assert grim_reaper(x, t, L) == pytest.approx(expected)
    assert isinstance(grim_reaper(0.0, 0.0), float)
    for x in [1.0, -1.0, np.array([0.0, 1.5])]:
        with pytest.raises(DomainError):
            grim_reaper(x, 0.0)


@given(st.floats(min_value=-0.99, max_value=0.99), st.floats(0.0, 10.0))
def test_grim_reaper_solves_gcsf(x, t):
    assert grim_reaper_residual(x, t) < 1e-9


def test_grim_reaper_pair_and_envelope():
    x = np.linspace(-0.9, 0.9, 7)
    upper, lower = grim_reaper_pair(x, 0.3, gap=0.4)
    assert np.allclose(upper, -lower)
    height = 0.4 + math.pi * 0.3 - (4.0 / math.pi) * np.log(np.cos(math.pi * x / 2))
    assert np.allclose(upper - lower, height)
    assert np.allclose(domination_envelope(x, 1.0, 0.5), grim_reaper(x, 0.5, 1.0))


def test_angenent_oval_profile():
    s = -1.0
    c = math.exp(math.pi**2 / 4.0)
    assert angenent_oval_profile(np.array([0.0]), s)[0] == pytest.approx(
        (2.0 / math.pi) * math.acosh(c)
    )
    w = angenent_oval_half_width(s)
    assert 0.0 < w < 1.0
    assert angenent_oval_upper(0.9999 * w, s) == pytest.approx(0.0, abs=0.1)
    assert angenent_oval_upper(1.01 * w, s) is None
    assert np.isnan(angenent_oval_profile(np.array([1.01 * w]), s)[0])
    for bad in [0.0, 1.0]:
        with pytest.raises(DomainError):
            angenent_oval_profile(np.array([0.0]), bad)
        with pytest.raises(DomainError):
            angenent_oval(bad)


def test_angenent_oval_polyline_lies_on_level_set():
    s = -0.5
    c = math.exp(-(math.pi**2) * s / 4.0)
    oval = angenent_oval(s, m=64, vertical_shift=0.25)
    assert oval.closed and len(oval) == 64
    x, y = oval.x, oval.y - 0.25
    level = np.cosh(math.pi * y / 2.0) - c * np.cos(math.pi * x / 2.0)
    assert np.max(np.abs(level)) < 1e-9
    assert np.max(np.abs(x)) == pytest.approx(angenent_oval_half_width(s))


def test_oval_approaches_grim_reaper():
    s = -4.0
    x = np.linspace(-0.5, 0.5, 21)
    gap = angenent_oval_profile(x, s) + grim_reaper(x, 0.0, oval_grim_reaper_shift(s))
    assert np.max(np.abs(gap)) < 1e-6


def test_shrinking_circle():
    for r0, t, expected in [
        (1.0, 0.0, 1.0),
        (1.0, 0.375, 0.5),
        (2.0, 1.5, 1.0),
        (1.0, 0.5, None),
        (1.0, 0.75, None),
    ]:
        assert circle_radius(r0, t) == (
            None if expected is None else pytest.approx(expected)
        )
        circle = shrinking_circle((1.0, -1.0), r0, t, m=32)
        if expected is None:
            assert circle is None
        else:
            radii = np.hypot(circle.x - 1.0, circle.y + 1.0)
            assert np.allclose(radii, expected)
    with pytest.raises(DomainError):
        shrinking_circle((0.0, 0.0), 0.0, 0.0)
