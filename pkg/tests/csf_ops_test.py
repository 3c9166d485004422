import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from app.core_types import Grid1D, Polyline, ScalarField, sample_linear
from app.csf_ops import (
    CurveFlowOptions,
    angle_range,
    build_local_initial_curve,
    clipped_area,
    count_intersections,
    count_self_intersections,
    counts_non_increasing,
    csf_step,
    curvature_vectors,
    edge_angle,
    flow_curve,
    flow_curves,
    graph_extract,
    graph_polyline,
    hausdorff_distance,
    intersection_events,
    local_gcsf_flow,
    min_distance,
    redistribute,
    stable_dt,
    tangency_tolerance,
)
from app.exact_solutions import angenent_oval, shrinking_circle
from app.lab_errors import DomainError, MultivaluedGraphError


def _line(y, a=-2.0, b=2.0, m=41):
    x = np.linspace(a, b, m)
    return graph_polyline(x, np.full(m, y))


def test_curvature_of_circle():
    for radius in [0.5, 1.0, 2.0]:
        circle = shrinking_circle((1.0, 1.0), radius, 0.0, m=256)
        kappa = curvature_vectors(circle)
        assert np.allclose(np.hypot(*kappa.T), 1.0 / radius, rtol=1e-3)
        inward = (1.0, 1.0) - circle.vertices
        assert np.all(np.sum(kappa * inward, axis=1) > 0.0)


def test_curvature_of_open_polyline():
    kappa = curvature_vectors(_line(0.0, m=5))
    assert np.allclose(kappa, 0.0)
    with pytest.raises(DomainError):
        curvature_vectors(Polyline([(0, 0), (1, 0)]))


def test_redistribute():
    x = np.concatenate((np.linspace(0.0, 0.5, 20), np.linspace(0.6, 1.0, 3)))
    p = graph_polyline(x, x * x)
    even = redistribute(p)
    assert len(even) == len(p)
    assert np.array_equal(even.vertices[[0, -1]], p.vertices[[0, -1]])
    chords = even.chord_lengths()
    assert np.max(chords) / np.min(chords) < 1.5


def test_csf_step_limits_dt():
    circle = shrinking_circle((0.0, 0.0), 1.0, 0.0, m=32)
    opts = CurveFlowOptions()
    dt = stable_dt(circle, opts)
    assert csf_step(circle, dt, opts).length() < circle.length()
    with pytest.raises(DomainError):
        csf_step(circle, 2.0 * dt, opts)
    for bad in [dict(dt_safety=0.0), dict(dt_safety=0.6), dict(redistribute_every=0)]:
        with pytest.raises(DomainError):
            CurveFlowOptions(**bad)


def test_count_intersections():
    x = np.linspace(-1.5, 1.5, 300)
    sine = graph_polyline(x, np.sin(math.pi * x))
    for p, q, expected in [
        (sine, _line(0.0, m=400), 3),
        (sine, _line(2.0), 0),
        (_line(0.0), _line(1.0), 0),
        (graph_polyline([-1.0, 1.0], [-1.0, 1.0]), _line(0.1), 1),
        (shrinking_circle((0.0, 0.0), 1.0, 0.0, 64), _line(0.1), 2),
    ]:
        assert count_intersections(p, q) == expected


_PARABOLA_X = np.linspace(-1.0, 1.0, 41)


def test_tangency_is_counted_once():
    axis = _line(0.0)
    for gap, expected, kinds in [
        (0.0, 1, ["touch"]),
        (1e-6, 0, []),
        (-1e-6, 2, ["crossing", "crossing"]),
    ]:
        parabola = graph_polyline(_PARABOLA_X, _PARABOLA_X**2 + gap)
        assert count_intersections(parabola, axis) == expected
        events = intersection_events(parabola, axis)
        assert sorted(e.kind for e in events) == kinds
    touching = graph_polyline(_PARABOLA_X, _PARABOLA_X**2)
    assert min_distance(touching, axis) == 0.0
    lifted = graph_polyline(_PARABOLA_X, _PARABOLA_X**2 + 1e-6)
    assert min_distance(lifted, axis) == pytest.approx(1e-6, rel=1e-2)


def test_dip_between_vertices_is_a_touch():
    # No node at x = 0, so the polyline stays above the axis while the curve
    # it samples dips below it
    x = np.linspace(-1.0, 1.0, 40)
    dipping = graph_polyline(x, x * x - 3e-4)
    assert np.min(dipping.y) > 0.0
    events = intersection_events(dipping, _line(0.0))
    assert [e.kind for e in events] == ["touch"]
    assert abs(events[0].x) < 0.05
    assert count_intersections(dipping, _line(0.0, m=40)) == 1
    far = graph_polyline(x, x * x + 0.3)
    assert count_intersections(far, _line(0.0)) == 0


def test_tangency_tolerance():
    parabola = graph_polyline(_PARABOLA_X, _PARABOLA_X**2)
    longest = float(np.max(parabola.chord_lengths()))
    assert longest > 0.1
    assert tangency_tolerance(parabola, _line(0.0)) == pytest.approx(2.0 * longest)


def test_count_self_intersections():
    t = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False) + 0.05
    figure_eight = Polyline(np.column_stack((np.sin(t), np.sin(2.0 * t))), True)
    for p, expected in [
        (figure_eight, 1),
        (shrinking_circle((0.0, 0.0), 1.0, 0.0, 64), 0),
        (_line(0.0), 0),
    ]:
        assert count_self_intersections(p) == expected


def test_distances():
    assert min_distance(_line(0.0), _line(0.5)) == pytest.approx(0.5)
    crossing = graph_polyline([-1.0, 1.0], [-1.0, 1.0])
    assert min_distance(crossing, _line(0.1)) == 0.0
    assert hausdorff_distance(_line(0.0), _line(0.25)) == pytest.approx(0.25)


def test_counts_non_increasing():
    for counts, expected in [
        ([3, 3, 1, 1], True),
        ([2, 1, 2, 1], True),
        ([1, 2, 2], False),
        ([1, 2], False),
        ([], True),
    ]:
        assert counts_non_increasing(counts) is expected


def test_graph_extract():
    grid = Grid1D(-1.0, 1.0, 21)
    x = np.linspace(-1.0, 1.0, 41)
    f = graph_extract(graph_polyline(x, x * x), grid)
    assert np.allclose(f.values, grid.nodes**2, atol=1e-2)
    with pytest.raises(MultivaluedGraphError) as e:
        graph_extract(shrinking_circle((0.0, 0.0), 2.0, 0.0, 64), grid)
    assert set(e.value.counts) == {2}
    capped = graph_extract(shrinking_circle((0.0, 0.0), 2.0, 0.0, 64), grid, 0.0)
    assert np.all(capped.values < 0.0)


def test_clipped_area():
    for p, lo, hi, expected in [
        (_line(1.0), -1.0, 1.0, 2.0),
        (_line(1.0), -math.inf, math.inf, 4.0),
        (graph_polyline([0.0, 2.0], [0.0, 2.0]), 0.0, 1.0, 0.5),
    ]:
        assert clipped_area(p, lo, hi) == pytest.approx(expected)


def test_build_local_initial_curve():
    grid = Grid1D(-1.0, 1.0, 21)
    u0 = ScalarField(grid, np.zeros(21))
    curve = build_local_initial_curve(u0, y_cap=3.0)
    assert tuple(curve.vertices[0]) == (-1.0, 3.0)
    assert tuple(curve.vertices[-1]) == (1.0, 3.0)
    assert count_self_intersections(curve) == 0
    with pytest.raises(DomainError):
        build_local_initial_curve(u0, y_cap=0.5)
    with pytest.raises(DomainError):
        shifted = ScalarField(Grid1D(0.0, 1.0, 21), np.zeros(21))
        build_local_initial_curve(shifted, 3.0)


def test_circle_shrinks_at_the_exact_rate():
    circle = shrinking_circle((0.0, 0.0), 1.0, 0.0, m=128)
    traj = flow_curve(circle, 0.25, snapshot_times=(0.125,))
    assert list(traj.times) == [0.0, 0.125, 0.25]
    final = traj.states[-1]
    radius = np.mean(np.hypot(final.x - np.mean(final.x), final.y - np.mean(final.y)))
    assert radius == pytest.approx(math.sqrt(0.5), rel=1e-2)
    assert traj.meta["extinct_at"] is None


def test_circle_extinction_stops_the_flow():
    circle = shrinking_circle((0.0, 0.0), 1.0, 0.0, m=64)
    traj = flow_curve(circle, 0.6)
    assert 0.45 < traj.meta["extinct_at"] <= 0.5
    assert traj.times[-1] == traj.meta["extinct_at"]


def test_local_gcsf_from_zero():
    u0 = ScalarField(Grid1D(-1.0, 1.0, 41), np.zeros(41))
    fields, curves = local_gcsf_flow(u0, 0.05, snapshot_times=(0.025,))
    assert list(fields.times) == [0.0, 0.025, 0.05]
    assert len(curves) == 3
    assert fields.meta["a_bar"] == pytest.approx(0.0)
    assert fields.meta["full_masses"][-1] > 0.0
    assert np.min(fields.values()) >= -1e-9
    with pytest.raises(DomainError):
        local_gcsf_flow(u0.with_values(np.full(41, -0.1)), 0.05)


def test_local_gcsf_edge_angles():
    u0 = ScalarField(Grid1D(-1.0, 1.0, 41), np.zeros(41))
    fields, curves = local_gcsf_flow(u0, 0.05, snapshot_times=(0.025,))
    # The far part of each ray stays vertical
    assert fields.meta["right_edge_angles"] == pytest.approx([math.pi] * 3)
    lo, hi = fields.meta["right_inner_angle_ranges"][0]
    assert (lo, hi) == pytest.approx((math.pi / 2.0, math.pi / 2.0))
    for (lo, hi), f in zip(fields.meta["right_inner_angle_ranges"], fields.states):
        assert 0.0 <= lo <= hi <= math.pi
        slope = (f.values[-1] - f.values[-2]) / f.grid.dx
        one_sided = math.pi / 2.0 + math.atan(slope)
        assert lo - 1e-9 <= one_sided <= hi + 1e-9
    diagonal = graph_polyline([-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0])
    assert angle_range(diagonal, 0.2, 0.4) == pytest.approx(
        (3.0 * math.pi / 4.0, 3.0 * math.pi / 4.0)
    )
    assert edge_angle(curves.states[-1], 2.0) == pytest.approx(math.pi)
    with pytest.raises(DomainError):
        edge_angle(diagonal, 5.0)
    with pytest.raises(DomainError):
        angle_range(diagonal, 2.0, 3.0)


def test_flowed_pairs_lose_intersections():
    x = np.linspace(-1.5, 1.5, 61)
    sine = graph_polyline(x, np.sin(math.pi * x))
    oval = angenent_oval(-0.6, m=96)
    # The sine has pinned ends: it keeps three crossings or straightens
    # towards the single crossing of its chord
    for p, q, t_end, initial, finals in [
        (sine, _line(0.0), 0.2, 3, (1, 3)),
        (oval, _line(0.5), 0.52, 2, (0,)),
    ]:
        snapshots = tuple(np.linspace(0.1, 0.9, 9) * t_end)
        first, second = flow_curves([p, q], t_end, snapshot_times=snapshots)
        assert list(first.times) == list(second.times)
        assert first.meta["extinct_at"] is None
        assert np.allclose(second.states[-1].y, q.y)
        counts = [
            count_intersections(a, b) for a, b in zip(first.states, second.states)
        ]
        assert counts[0] == initial
        assert counts[-1] in finals
        assert counts_non_increasing(counts)


def test_oval_follows_its_closed_form():
    start = angenent_oval(-1.0, m=128)
    traj = flow_curve(start, 0.5, snapshot_times=(0.125, 0.25, 0.375))
    exact = angenent_oval(-0.5, m=128)
    error = hausdorff_distance(traj.states[-1], exact)
    assert error < 0.05
    assert error < 0.1 * hausdorff_distance(start, exact)
    assert traj.meta["extinct_at"] is None


def test_closed_curve_length_decreases():
    for curve in [
        angenent_oval(-0.8, m=96),
        shrinking_circle((0.5, -0.5), 1.0, 0.0, m=64),
    ]:
        traj = flow_curve(curve, 0.3, snapshot_times=(0.05, 0.1, 0.15, 0.2, 0.25))
        lengths = traj.meta["lengths"]
        assert len(lengths) == 6
        assert lengths[0] == pytest.approx(curve.length())
        assert np.all(np.diff(lengths) < 0.0)


def test_local_gcsf_preserves_order():
    grid = Grid1D(-1.0, 1.0, 41)
    low = ScalarField(grid, 0.5 * (1.0 - grid.nodes**2))
    high = ScalarField(grid, 1.0 - grid.nodes**2)
    low_fields, _ = local_gcsf_flow(low, 0.05)
    high_fields, _ = local_gcsf_flow(high, 0.05)
    margin = max(
        low_fields.meta["epsilon_margin"], high_fields.meta["epsilon_margin"]
    )
    x = np.linspace(-1.0 + margin, 1.0 - margin, 31)
    below = sample_linear(low_fields.states[-1], x)
    above = sample_linear(high_fields.states[-1], x)
    assert np.all(below <= above + 1e-3)
    assert above[15] - below[15] > 0.3
    assert np.all(below >= -1e-9)


@given(st.floats(min_value=0.2, max_value=3.0), st.integers(16, 128))
def test_circle_polygon_length_is_below_perimeter(radius, m):
    circle = shrinking_circle((0.0, 0.0), radius, 0.0, m)
    assert circle.length() <= 2.0 * math.pi * radius
    assert circle.enclosed_area() <= math.pi * radius * radius
