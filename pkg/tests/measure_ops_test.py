import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from app.artifact_ops import write_field_csv
from app.core_types import Grid1D, ScalarField, Trajectory
from app.lab_errors import DomainError, MeasureValidationError
from app.measure_ops import (
    RadonMeasureSpec,
    SingularCDF,
    TestFunction,
    cantor_function,
    cauchy_report,
    check_dominated,
    check_dominating_growth,
    check_initial_trace,
    check_lp_growth,
    check_weak_gap,
    default_battery,
    flow_from_measure,
    initial_trace,
    load_measure_spec,
    measure_of_interval,
    mollification_allowance,
    mollifier_kernel,
    mollify_pair,
    strong_convergence_check,
    total_variation,
    validate_measure,
    weak_gap,
)


def _hat(height=1.0, half_width=0.5, center=0.0):
    return lambda x: height * np.clip(1.0 - np.abs(x - center) / half_width, 0.0, None)


def _density(**kwargs):
    return ScalarField.from_function(Grid1D(-1.0, 1.0, 201), _hat(**kwargs))


def _mixed():
    """Positive hat on the left, negative Cantor part on the right"""
    cantor = SingularCDF("cantor", support=(0.0, 0.75), mass=0.5, sign=-1)
    return RadonMeasureSpec(_density(half_width=0.25, center=-0.5), (cantor,))


@pytest.fixture(scope="module")
def smooth_flow():
    nu = RadonMeasureSpec(_density())
    result = flow_from_measure(
        nu, 0.05, [0.1, 0.05], cutoff_radius=1.0, snapshot_times=(0.01, 0.02)
    )
    return nu, result


@pytest.fixture(scope="module")
def mixed_flow():
    nu = _mixed()
    result = flow_from_measure(
        nu, 0.05, [0.1, 0.05], cutoff_radius=1.0, snapshot_times=(0.01, 0.02)
    )
    return nu, result


def test_cantor_function():
    for y, expected in [(0.0, 0.0), (1.0, 1.0), (0.5, 0.5), (0.4, 0.5), (0.25, 1 / 3)]:
        assert float(cantor_function(y, 12)) == pytest.approx(expected, abs=2**-12)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_cantor_function_is_monotone(a, b):
    lo, hi = sorted((a, b))
    assert cantor_function(lo, 10) <= cantor_function(hi, 10) + 1e-12


def test_singular_cdf_validation():
    for make in [
        lambda: SingularCDF("dirac"),
        lambda: SingularCDF("cantor", support=(1.0, 0.0)),
        lambda: SingularCDF("cantor", depth=0),
        lambda: SingularCDF("cantor", sign=2),
        lambda: SingularCDF("staircase", breakpoints=((0.0, 0.0),)),
        lambda: SingularCDF("staircase", breakpoints=((1.0, 0.0), (0.0, 1.0))),
        lambda: SingularCDF(
            "staircase", breakpoints=((0.0, 0.0), (1.0, 1.0), (2.0, 0.5))
        ),
    ]:
        with pytest.raises(MeasureValidationError):
            make()


def test_staircase():
    part = SingularCDF(
        "staircase", breakpoints=((0.0, 0.0), (1.0, 0.5), (2.0, 0.5), (3.0, 1.0))
    )
    assert np.allclose(part.cdf(np.array([-1.0, 1.5, 4.0])), [0.0, 0.5, 1.0])
    assert part.total_variation() == 1.0
    assert part.span() == (0.0, 3.0)


def test_atoms_are_rejected():
    with pytest.raises(MeasureValidationError):
        validate_measure(RadonMeasureSpec(atoms=((0.0, 1.0),)))
    with pytest.raises(MeasureValidationError):
        load_measure_spec({"atoms": [[0.0, 1.0]]})


def test_measure_of_intervals():
    nu = _mixed()
    assert nu.support() == pytest.approx((-0.75, 0.75), abs=0.02)
    for a, b, expected in [
        (-1.0, 1.0, 0.25 - 0.5),
        (-1.0, -0.5, 0.125),
        (0.0, 0.75, -0.5),
        (0.0, 0.375, -0.25),
    ]:
        assert measure_of_interval(nu, a, b) == pytest.approx(expected, abs=1e-3)
    assert total_variation(nu) == pytest.approx(0.75)
    assert total_variation(RadonMeasureSpec()) == 0.0
    with pytest.raises(DomainError):
        measure_of_interval(nu, 1.0, 1.0)


def test_load_measure_spec(tmp_path):
    write_field_csv(tmp_path / "density.csv", _density())
    payload = {
        "density": {"csv": "density.csv"},
        "singular": [{"kind": "cantor", "support": [0.0, 1.0], "mass": 0.5}],
    }
    nu = load_measure_spec(payload, tmp_path)
    assert total_variation(nu) == pytest.approx(1.0, abs=1e-6)
    for bad in [[], {"singular": [{"depth": 3}]}]:
        with pytest.raises(MeasureValidationError):
            load_measure_spec(bad)


def test_test_functions():
    phi = TestFunction.hat(-1.0, 1.0)
    assert phi.constant == pytest.approx(math.pi)
    assert phi.lipschitz == pytest.approx(1.0)
    assert np.allclose(phi(np.array([-2.0, 0.0, 0.5])), [0.0, 1.0, 0.5])
    # (1 + x) / 2 on [0, 1] against the Cantor measure, whose mean is 1/2
    ramp = TestFunction.hat(-1.0, 3.0)
    cantor = RadonMeasureSpec(singular=(SingularCDF("cantor"),))
    assert ramp.integrate_measure(cantor) == pytest.approx(0.75, abs=1e-3)
    for knots, values in [
        ((0.0, 1.0), (0.0, 0.0)),
        ((0.0, 1.0, 0.5), (0.0, 1.0, 0.0)),
        ((0.0, 0.5, 1.0), (1.0, 1.0, 0.0)),
    ]:
        with pytest.raises(DomainError):
            TestFunction(knots, values)
    with pytest.raises(DomainError):
        phi.on_grid(Grid1D(0.0, 1.0, 11))


def test_default_battery():
    battery = default_battery((-1.0, 1.0), levels=3)
    assert len(battery.functions) == 7
    assert battery.max_constant == pytest.approx(math.pi)
    assert battery.functions[0].knots == (-1.5, 0.0, 1.5)
    with pytest.raises(DomainError):
        default_battery((1.0, 1.0))


def test_mollifier_kernel_has_unit_mass():
    for epsilon, dx in [(0.1, 0.01), (0.05, 0.0125), (0.3, 0.02)]:
        assert np.sum(mollifier_kernel(epsilon, dx)) * dx == pytest.approx(1.0)


def test_mollify_pair():
    nu = _mixed()
    u0, U0 = mollify_pair(nu, 0.1, 1.0)
    assert np.all(U0.values >= np.abs(u0.values) - 1e-12)
    assert trapezoid(u0.values, u0.x) == pytest.approx(-0.25, abs=1e-3)
    assert trapezoid(U0.values, U0.x) == pytest.approx(0.75, abs=1e-3)
    battery = default_battery(nu.support(), levels=2)
    assert weak_gap(nu, u0, battery) <= mollification_allowance(nu, battery, 0.1)
    for epsilon, grid in [
        (0.0, None),
        (0.01, Grid1D.with_spacing(-2.0, 2.0, 0.01)),
        (0.1, Grid1D(-1.0, 1.0, 201)),
    ]:
        with pytest.raises(DomainError):
            mollify_pair(nu, epsilon, 1.0, grid)


def test_flow_from_measure_validation():
    nu = RadonMeasureSpec(_density())
    for epsilons in [[], [0.1, 0.0], [0.05, 0.1]]:
        with pytest.raises(DomainError):
            flow_from_measure(nu, 0.05, epsilons)


def test_flow_from_measure(mixed_flow):
    nu, result = mixed_flow
    assert result.epsilon == 0.05
    assert set(result.flows) == {0.1, 0.05}
    assert list(result.u.times) == pytest.approx([0.0, 0.01, 0.02, 0.05])
    assert result.cauchy.status == "inconclusive"
    assert check_dominated(result.u, result.U).passed
    assert check_dominating_growth(result.U, nu, (-1.5, 1.5)).passed
    battery = default_battery(nu.support(), levels=2)
    assert check_weak_gap(nu, result.u, battery, epsilon=0.05).passed


def test_strong_convergence_away_from_singular_parts(mixed_flow):
    nu, result = mixed_flow
    u0 = result.u.states[0]
    assert strong_convergence_check(result.u, u0, (-1.0, -0.1), nu=nu).passed
    with pytest.raises(DomainError):
        strong_convergence_check(result.u, u0, (0.5, 1.0), nu=nu)


def test_smooth_flow_growth_and_trace(smooth_flow):
    nu, result = smooth_flow
    assert check_lp_growth(result.u, 2.0).passed
    with pytest.raises(DomainError):
        check_lp_growth(result.u, 0.5)
    battery = default_battery((-0.5, 0.5), levels=2)
    estimates = initial_trace(result.u, battery)
    assert len(estimates) == len(battery.functions)
    assert all(e.error_bar == pytest.approx(e.phi.constant * 0.01) for e in estimates)
    assert check_initial_trace(nu, result.u, battery, epsilon=0.05).passed
    only_start = Trajectory([0.0], result.u.states[:1])
    with pytest.raises(DomainError):
        initial_trace(only_start, battery)


def _constant_flow(level, times=(0.0, 0.5, 1.0)):
    grid = Grid1D(-1.0, 1.0, 21)
    states = tuple(ScalarField(grid, np.full(21, level)) for _ in times)
    return Trajectory(times, states)


def test_cauchy_report():
    for levels, expected in [
        ([0.0, 1.0, 1.25, 1.3125], "pass"),
        ([0.0, 1.0, 1.9, 2.7], "fail"),
        ([0.0, 1.0], "inconclusive"),
    ]:
        flows = [(2.0**-k, _constant_flow(v)) for k, v in enumerate(levels)]
        assert cauchy_report(flows, (-1.0, 1.0), 0.1).status == expected
