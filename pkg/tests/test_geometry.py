import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from fpplab.engine import LatticePath, first_entry_point, shortest_passage
from fpplab.errors import DegenerateShape, LengthMismatch, NoEntry, NonpositiveArg, ZeroVector
from fpplab.geometry import (
    DirectionFrame,
    ScalingModel,
    ThetaCoords,
    TubeRegion,
    axis_frame,
    build_frame,
    classify_fast_segments,
    delta,
    delta_inverse,
    deviation_cost,
    ell_segments,
    euclidean_shape,
    fat_triangle_excess,
    frame_from_normal,
    from_theta_coordinates,
    l1_shape,
    max_backtrack,
    phi,
    phi_inverse,
    symmetric_deviation_cost,
    theta_coordinates,
    theta_sup_norm,
    tube_contains,
    xi_fn,
)
from fpplab.lattice import Exponential
from fpplab.scaling import LimitShapeEstimate, corridor_box, direction_grid_2d
from fpplab.lattice import sample_config
from fpplab.seeding import derive_seed

CUBE = ScalingModel(1.0, 1.0 / 3.0)
finite = st.floats(-1e3, 1e3, allow_nan=False)


@pytest.fixture(scope="module")
def tilted():
    return DirectionFrame((1, 0), (1, 0), (1, 1), [np.array([1, -1]) / math.sqrt(2)])


def test_theta_coordinates_example(tilted):
    tc = theta_coordinates(tilted, (0, 2))
    assert tc.u1 == pytest.approx(2)
    assert tc.u2[0] == pytest.approx(-2 * math.sqrt(2))
    one = theta_coordinates(tilted, tilted.y_theta)
    assert one.u1 == pytest.approx(1) and one.u2[0] == pytest.approx(0, abs=1e-15)


def test_frame_validation():
    with pytest.raises(DegenerateShape):
        DirectionFrame((1, 0), (1, 0), (2, 0), [(0, 1)])  # y.z != 1
    with pytest.raises(DegenerateShape):
        DirectionFrame((1, 0), (1, 0), (1, 0), [(1, 1)])  # basis not orthogonal to z
    with pytest.raises(DegenerateShape):
        # y nearly orthogonal to z violates the angle bound
        DirectionFrame((0.1, 1), (1 / 1.0, 10.0), (1, 0), [(0, 1)])


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, math.pi / 2 - 0.05), st.lists(finite, min_size=2, max_size=2))
def test_round_trip_2d(angle, u):
    frame = frame_from_normal((math.cos(angle), math.sin(angle)), 0.4)
    back = from_theta_coordinates(frame, theta_coordinates(frame, u))
    assert np.allclose(back, u, rtol=1e-9, atol=1e-9 * (1 + np.abs(u).max()))


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3), st.lists(st.floats(0.2, 1.0), min_size=3, max_size=3))
def test_round_trip_3d(u, z):
    frame = frame_from_normal(z, 0.4)
    back = from_theta_coordinates(frame, theta_coordinates(frame, u))
    assert np.allclose(back, u, rtol=1e-9, atol=1e-9 * (1 + np.abs(u).max()))


def test_axis_frame_from_symmetric_shape():
    shape = euclidean_shape(2, 0.42)
    frame = build_frame((1, 0), shape)
    assert np.allclose(frame.z_theta, [0.42, 0], atol=1e-12)
    assert frame.y_theta @ frame.z_theta == pytest.approx(1, abs=1e-12)
    assert frame.mu == pytest.approx(0.42)
    l1 = build_frame((1, 0), l1_shape(2))
    assert np.allclose(l1.z_theta, [1, 0], atol=1e-12)


def test_build_frame_degenerate():
    class Broken:
        def G(self, theta):
            return float("nan")

    with pytest.raises(DegenerateShape):
        build_frame((1, 0), Broken())


@pytest.fixture(scope="module")
def mc_shape():
    """Cheap Monte Carlo shape estimate (d=2 Exponential(1)), reused below."""
    from fpplab.scaling import estimate_limit_shape

    return estimate_limit_shape(Exponential(1), direction_grid_2d(9), radius=48, replicas=60, seed=5)


def test_angle_bound_on_estimated_shape(mc_shape):
    rng = np.random.default_rng(0)
    for a in rng.uniform(0, 2 * math.pi, 100):
        frame = build_frame((math.cos(a), math.sin(a)), mc_shape)
        y, z = frame.y_theta, frame.z_theta
        assert abs(y @ z - 1) <= 1e-12
        assert y @ z / (np.linalg.norm(y) * np.linalg.norm(z)) >= 1 / math.sqrt(2)


def test_fat_triangle_ratio_on_estimated_shape(mc_shape):
    rng = np.random.default_rng(1)
    ratios = []
    while len(ratios) < 200:
        x = rng.uniform(-50, 50, 2)
        v = x + rng.uniform(-100, 100, 2)
        u = x + rng.uniform(-100, 100, 2)
        dl, excess = fat_triangle_excess(x, u, v, mc_shape)
        if dl < 0.05:
            continue
        ratios.append(excess / (min(dl * dl, dl) * np.linalg.norm(v - x)))
    assert min(ratios) > 0


def test_scaling_functions():
    for r in (1.0, 8.0, 1000.0):
        assert delta(CUBE, r) == pytest.approx(r ** (2 / 3), rel=1e-12)
    for r in (10.0, 1e3, 1e6):
        assert delta_inverse(CUBE, delta(CUBE, r)) == pytest.approx(r, rel=1e-9)
    assert CUBE.xi == pytest.approx(2 / 3)
    for s in (0.5, 3.0, 100.0):
        assert phi_inverse(CUBE, phi(CUBE, s)) == pytest.approx(s, rel=1e-9)
    for fn in (delta, delta_inverse, xi_fn, phi):
        with pytest.raises(NonpositiveArg):
            fn(CUBE, 0.0)
    with pytest.raises(NonpositiveArg):
        ScalingModel(1.0, 1.2)
    with pytest.raises(NonpositiveArg):
        ScalingModel(-1.0, 0.3)


def test_model_text_round_trip():
    m = ScalingModel(0.75, 0.23, 16, 512, 0.01)
    assert ScalingModel.from_text(m.to_text()) == m


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 1e6), st.floats(0.05, 0.95), st.floats(0.1, 10))
def test_delta_and_xi_phi_identities(s, chi, A):
    m = ScalingModel(A, chi)
    assert delta_inverse(m, delta(m, s)) == pytest.approx(s, rel=1e-9)
    assert xi_fn(m, s) ** 2 * phi(m, s) / s**2 == pytest.approx(1.0, rel=1e-12)
    assert delta(m, s * 1.01) > delta(m, s)


def test_deviation_cost_branches():
    f = axis_frame(2, 1.0)
    assert deviation_cost(CUBE, f, (5, 0)) == 0
    assert deviation_cost(CUBE, f, (-3, 1)) == phi(CUBE, 3)
    assert deviation_cost(CUBE, f, (2, 5)) == pytest.approx(phi(CUBE, 5), rel=1e-12)
    near = deviation_cost(CUBE, f, (100, 3))
    assert near == pytest.approx(9 / xi_fn(CUBE, 100) ** 2)
    with pytest.raises(ZeroVector):
        deviation_cost(CUBE, f, (0, 0))


@settings(max_examples=300, deadline=None)
@given(st.floats(0.01, 1e4), st.floats(0.0, 1e4), st.floats(0.0, 1e4))
def test_deviation_cost_properties(u1, a, b):
    f = axis_frame(2, 1.0)
    lo, hi = sorted((a, b))
    assume(hi > 0)
    d_lo = deviation_cost(CUBE, f, (u1, lo))
    d_hi = deviation_cost(CUBE, f, (u1, hi))
    assert 0 <= d_lo <= d_hi
    if hi >= u1:
        both = (hi**2 / xi_fn(CUBE, u1) ** 2, phi(CUBE, hi))
        assert d_hi == min(both)
        assert d_hi == pytest.approx(phi(CUBE, theta_sup_norm(ThetaCoords(u1, (hi,)))), rel=1e-12)


def test_tube_region():
    f = axis_frame(2, 1.0)
    tube = TubeRegion(f, 100.0, 0.5, CUBE)
    for t in (0.1, 10.0, 50.0, 99.0):
        assert tube_contains(TubeRegion(f, 100.0, 1e-9, CUBE), (t, 0))
    assert symmetric_deviation_cost(CUBE, f, 100.0, (0, 0)) == 0.0
    u = np.array([20.0, 7.0])
    c = symmetric_deviation_cost(CUBE, f, 100.0, u)
    assert tube_contains(TubeRegion(f, 100.0, c, CUBE), u)
    assert not tube_contains(TubeRegion(f, 100.0, c / (1 + 1e-6), CUBE), u)
    assert tube_contains(tube, u) == tube_contains(tube, 100 * f.y_theta - u)


@settings(max_examples=200, deadline=None)
@given(st.floats(-200, 300), st.floats(-200, 200), st.floats(1, 500))
def test_tube_midpoint_symmetry(u1, u2, r):
    f = frame_from_normal((0.5, 0.2), 0.4)
    u = from_theta_coordinates(f, ThetaCoords(u1, (u2,)))
    assume(abs(u1 - r / 2) > 1e-6 and min(np.linalg.norm(u), np.linalg.norm(r * f.y_theta - u)) > 1e-6)
    a = symmetric_deviation_cost(CUBE, f, r, u)
    b = symmetric_deviation_cost(CUBE, f, r, r * f.y_theta - u)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-6)


def test_fat_triangle_examples():
    shape = euclidean_shape(2)
    dl, ex = fat_triangle_excess((0, 0), (5, 5), (10, 0), shape)
    assert dl == pytest.approx(0.5) and ex == pytest.approx(2 * math.sqrt(50) - 10)
    dl, ex = fat_triangle_excess((0, 0), (4, 0), (10, 0), shape)
    assert dl == 0 and ex >= -1e-12


@settings(max_examples=300, deadline=None)
@given(st.floats(0.01, 1e3), st.floats(0.01, 1e3))
def test_euclidean_detour_bounds(ell, m):
    # isosceles detour over a base of length 2*ell: excess = 2*(sqrt(ell^2+m^2) - ell)
    _, ex = fat_triangle_excess((0, 0), (ell, m), (2 * ell, 0), euclidean_shape(2))
    half = ex / 2
    slack = 1e-12 * (ell + m)  # cancellation in sqrt(ell^2 + m^2) - ell
    assert half >= min(m / 3, m * m / (3 * ell)) - slack
    assert half <= m * m / (2 * ell) + slack


def test_max_backtrack_examples():
    f = axis_frame(2, 0.25)  # u1 = x / 4
    assert max_backtrack([(0, 0), (4, 0), (8, 0), (5, 0), (12, 0)], f) == 0.75
    assert max_backtrack(LatticePath([(0, 0), (1, 0), (1, 1), (2, 1)]), f) == 0


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.tuples(st.integers(-20, 20), st.integers(-20, 20)), min_size=1, max_size=30))
def test_max_backtrack_matches_quadratic_oracle(sites):
    f = frame_from_normal((0.7, 0.3), 0.4)
    u = list(np.asarray(sites, dtype=float) @ f.z_theta)
    brute = max([0.0] + [u[i] - u[j] for i in range(len(u)) for j in range(i + 1, len(u))])
    assert max_backtrack(sites, f) == brute


def test_ell_segments_straight_path():
    f = axis_frame(2, 1.0)
    path = LatticePath([(x, 0) for x in range(17)])
    segs = ell_segments(path, f, 4.0)
    assert [i for _, i in segs] == [1, 2, 3, 4]
    assert all(seg[-1][0] - seg[0][0] == 4 for seg, _ in segs)
    for seg, i in segs:
        assert seg[-1] == first_entry_point(path, f, 4.0 * i)
    with pytest.raises(NoEntry):
        ell_segments(LatticePath([(0, 0), (1, 0)]), f, 4.0)


def test_ell_segments_reconcatenate_sampled_geodesics():
    f = axis_frame(2, 1.0)
    for k in range(5):
        target = (60, 0)
        box = corridor_box(target, CUBE)
        config = sample_config(box, Exponential(1), derive_seed(3, "segments", k))
        path = shortest_passage(config, (0, 0), target).path
        segs = ell_segments(path, f, 12.0)
        joined = list(segs[0][0].sites)
        for seg, _ in segs[1:]:
            assert seg[0] == joined[-1]
            joined.extend(seg.sites[1:])
        last = first_entry_point(path, f, 12.0 * len(segs))
        assert tuple(joined) == path.sites[: path.sites.index(last) + 1]


def test_classify_fast_segments():
    segs = [None] * 4
    assert classify_fast_segments(segs, [9.0] * 4, 10.0, 2.0, 0.5) == [True] * 4
    assert classify_fast_segments(segs, [12.0] * 4, 10.0, 2.0, 0.5) == [False] * 4
    with pytest.raises(LengthMismatch):
        classify_fast_segments(segs, [1.0], 10.0, 2.0, 0.5)
