import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpplab.coalescence import (
    RationalFrame,
    StartSiteRow,
    coalescence_site,
    coalescence_tail,
    duality_holds,
    enlarge_gap,
    entries_monotone,
    enumerate_start_sites,
    find_gaps,
    jump_size,
    rational_axis_frame,
    snap_rational_frame,
    sources_and_entries,
)
from fpplab.engine import LatticePath
from fpplab.errors import BadOrientation, Censored, MissingSide, NonContinuousSpec
from fpplab.geometry import ScalingModel, axis_frame, frame_from_normal
from fpplab.lattice import BoxRegion, Exponential, TestTable, sample_config
from fpplab.oracle import brute_force_passage
from fpplab.rays import ray_forest, theta_box
from fpplab.seeding import derive_seed

EXP = Exponential(1)
MU = 0.42
RF = rational_axis_frame(MU)
PILOT = ScalingModel(0.75, 0.25)


def row(h, src, V=None, W=None, censored=False):
    V = h if V is None else V
    return StartSiteRow((0, h), src, (0, V), W, censored, float(h), float(V), None if W is None else float(W[1]))


# -- start sites -----------------------------------------------------------------


def test_diagonal_staircase():
    frame = frame_from_normal((0.3, 0.3), 0.42)
    rf = RationalFrame(frame, 1, 1)
    sites = enumerate_start_sites(rf, range(-5, 6))
    assert sites == [(-k, k) for k in range(-5, 6)]


@pytest.mark.parametrize("zvec", [(1.0, 0.0), (1.0, 0.4), (-1.0, 0.7), (0.9, -0.9), (0.5, 1.0)])
def test_start_site_definition(zvec):
    rf = snap_rational_frame(frame_from_normal(zvec, 0.42))
    heights = range(-20, 21)
    if abs(rf.q) < abs(rf.p):
        with pytest.raises(BadOrientation):
            enumerate_start_sites(rf, heights)
        return
    sites = enumerate_start_sites(rf, heights)
    assert len(sites) == len(heights) and [s[1] for s in sites] == list(heights)
    for s in sites:
        assert rf.form(np.array(s)) <= 0
        assert any(rf.form(np.array(s) + e) > 0 for e in ((1, 0), (-1, 0), (0, 1), (0, -1)))


def test_rejects_three_dimensions():
    with pytest.raises(BadOrientation):
        snap_rational_frame(axis_frame(3, MU))


# -- sources and entries -----------------------------------------------------------


def dip_config():
    highway = [(0, 0), (1, 0), (1, 1), (0, 1), (0, 2), (1, 2)] + [(x, 2) for x in range(2, 12)]
    table = {(a, b): 0.01 for a, b in zip(highway, highway[1:])}
    box = BoxRegion((-3, -4), (11, 6))
    return sample_config(box, TestTable(table, default=1.0), 0)


def test_dipping_ray_is_not_a_source():
    config = dip_config()
    frame = axis_frame(2, 1.0)
    rf = rational_axis_frame(1.0)
    starts = enumerate_start_sites(rf, range(-2, 5))
    rows = {r.z: r for r in sources_and_entries(config, frame, rf, 4.0, starts, kappa=2, guard=0)}
    assert not rows[(0, 0)].is_source and rows[(0, 0)].V == (0, 2)
    assert rows[(0, 2)].is_source and rows[(0, 2)].V == (0, 2)
    assert rows[(0, 0)].W == rows[(0, 2)].W == (4, 2)
    # every other start also reaches the cheap route, through (0, 2)
    assert all(r.V == (0, 2) for r in rows.values())


def sampled_rows(k, r=16.0, half=40, kappa=4):
    frame = RF.frame
    box = theta_box(frame, (-8.0, kappa * r + frame.fat_width + 2), [(-3 * half, 3 * half)])
    config = sample_config(box, EXP, derive_seed(5, "rows", k))
    starts = enumerate_start_sites(RF, range(-half, half + 1))
    return sources_and_entries(config, frame, RF, r, starts, kappa)


@pytest.mark.parametrize("k", range(6))
def test_structure_on_sampled_configs(k):
    rows = sampled_rows(k)
    by_z = {r.z: r for r in rows}
    for r in rows:
        if r.censored:
            continue
        if r.V in by_z:
            assert by_z[r.V].is_source
        assert (r.V == r.z) == r.is_source
        assert r.W[0] * MU >= 16.0
    gaps, intervals = find_gaps(rows, 16.0)
    assert duality_holds(rows, intervals)
    assert entries_monotone(rows)
    for g in gaps:
        assert g.lo < g.hi


# -- gaps, intervals, enlargement --------------------------------------------------


def test_single_source_no_gaps():
    gaps, intervals = find_gaps([row(0, True, W=(9, 0)), row(1, False, V=0, W=(9, 0))])
    assert gaps == [] and len(intervals) == 1


def test_two_sources_one_gap():
    gaps, intervals = find_gaps([row(0, True, W=(9, 0)), row(1, True, W=(9, 3))])
    assert len(gaps) == 1 and (gaps[0].lo, gaps[0].hi) == (0, 1)
    assert len(intervals) == 2


def test_enlarge_with_all_sources_is_identity():
    rows = [row(h, True, W=(9, 0 if h < 3 else 5)) for h in range(7)]
    (gap,), _ = find_gaps(rows)
    e = enlarge_gap(rows, gap)
    assert (e.lo, e.hi) == (gap.lo, gap.hi) and e.kind == "enlarged"
    assert e.G_min == (0, 3) and e.G_max == (0, 2)


def test_enlarge_with_jumping_start():
    rows = [row(h, True, W=(9, 0)) for h in range(3)]
    rows += [row(3, True, W=(9, 5))]
    rows += [row(4, False, V=1, W=(9, 0)), row(5, True, W=(9, 5)), row(6, True, W=(9, 5))]
    gaps, _ = find_gaps(rows)
    gap = next(g for g in gaps if g.lo == 2 and g.hi == 3)
    e = enlarge_gap(rows, gap)
    assert e.G_max == (0, 4) and e.G_max_pos > gap.hi
    assert (e.lo, e.hi) == (2, 4)
    assert jump_size(rows, e) == 3


def test_enlarge_missing_side():
    # the lowest scanned start already jumps above the gap, so G_min may lie below the scan
    rows = [row(0, False, V=2, W=(9, 5)), row(1, True, W=(9, 0)), row(2, True, W=(9, 5))]
    (gap,), _ = find_gaps(rows)
    with pytest.raises(MissingSide):
        enlarge_gap(rows, gap)


# -- coalescence sites -----------------------------------------------------------


def crafted_merge():
    cheap = [((0, 0), (1, 0)), ((0, 1), (1, 1)), ((1, 1), (1, 0)), ((1, 0), (2, 0)), ((2, 0), (3, 0))]
    return sample_config(BoxRegion((0, -2), (4, 2)), TestTable({b: 0.1 for b in cheap}, default=1.0), 0)


def oracle_ray(config, start, slab):
    best = min((brute_force_passage(config, start, t)[:2] for t in slab), key=lambda tp: tp[0])
    return best[1]


def test_crafted_merge_site_matches_oracle():
    config = crafted_merge()
    frame = axis_frame(2, 1.0)
    rf = rational_axis_frame(1.0)
    rec = coalescence_site(config, (0, 0), (0, 1), frame, 1.5, kappa=2, rframe=rf, guard=0)
    slab = [(x, y) for x in (3, 4) for y in range(-2, 3)]
    pa, pb = oracle_ray(config, (0, 0), slab), oracle_ray(config, (0, 1), slab)
    merge = next(s for s in pa.sites if s in pb.sites)
    assert rec.U == merge == (1, 0)
    assert rec.coalesced and rec.U1 == 1.0


def test_separate_highways_do_not_coalesce():
    table = {((x, -2), (x + 1, -2)): 0.01 for x in range(0, 10)}
    table.update({((x, 2), (x + 1, 2)): 0.01 for x in range(0, 10)})
    table.update({((0, -1), (0, -2)): 0.01, ((0, 1), (0, 2)): 0.01})
    config = sample_config(BoxRegion((-2, -5), (10, 5)), TestTable(table, default=1.0), 0)
    rec = coalescence_site(config, (0, -1), (0, 1), axis_frame(2, 1.0), 3.0, kappa=2, rframe=rational_axis_frame(1.0), guard=0)
    assert not rec.coalesced and rec.U is None


def test_censored_on_boundary_contact():
    config = sample_config(BoxRegion((0, -1), (60, 1)), EXP, 0)
    with pytest.raises(Censored):
        coalescence_site(config, (0, 0), (0, 1), RF.frame, 8.0, kappa=2, rframe=RF)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 6))
def test_coalescence_symmetry_and_semantics(seed, sep):
    frame = RF.frame
    box = theta_box(frame, (-10, 4 * 12 + 3), [(-80, 80)])
    config = sample_config(box, EXP, seed)
    x, y = (0, 0), (0, sep)
    a = coalescence_site(config, x, y, frame, 12.0, rframe=RF)
    b = coalescence_site(config, y, x, frame, 12.0, rframe=RF)
    assert (a.U, a.U1, a.coalesced) == (b.U, b.U1, b.coalesced)
    forest = ray_forest(config, frame, 48.0, np.array([box.index(x), box.index(y)]))
    px = list(forest.path(box.index(x)).sites)
    py = list(forest.path(box.index(y)).sites)
    if a.U is not None:
        i, j = px.index(a.U), py.index(a.U)
        assert not set(px[:i]) & set(py[:j])
        assert px[i:] == py[j:]


# -- tails -----------------------------------------------------------------------


def small_tail(seed, sep=4, grid=(4, 8, 16), replicas=20):
    return coalescence_tail(
        EXP, sep, list(grid), replicas, seed, frame=RF.frame, rframe=RF, pairs_per_replica=3, model=PILOT
    )


def test_tail_requires_continuous():
    with pytest.raises(NonContinuousSpec):
        coalescence_tail(TestTable(default=1.0), 2, [4, 8, 16], 2, 0, frame=RF.frame)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32))
def test_tail_nonincreasing(seed):
    tail = small_tail(seed, replicas=8)
    for col in (1, 2, 3):
        ps = [r[col] for r in tail.rows]
        assert all(a >= b for a, b in zip(ps, ps[1:]))
    assert all(r[2] <= r[1] for r in tail.rows)


def test_tail_starts_at_one_below_the_box():
    tail = small_tail(3, grid=(-1000, 8, 16), replicas=6)
    assert tail.rows[0][1] == 1.0
    assert tail.rows[0][2] == 1.0 - tail.censored / tail.pairs
    assert tail.slope is None


def test_tail_increases_with_separation():
    near = small_tail(7, sep=1, grid=(4, 8, 16), replicas=60)
    far = small_tail(7, sep=8, grid=(4, 8, 16), replicas=60)
    for a, b in zip(near.rows, far.rows):
        assert b[1] >= a[1] - 2 * np.hypot(a[6], b[6])
