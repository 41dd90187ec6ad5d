import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarspace.bvh import AngularIndex, BvhIndex, brute_force_intersect


def soup(rng, n, size=0.3, box=5.0):
    a = rng.uniform(-box, box, (n, 3))
    v = np.concatenate([a, a + rng.normal(0, size, (n, 3)), a + rng.normal(0, size, (n, 3))])
    f = np.column_stack([np.arange(n), np.arange(n, 2 * n), np.arange(2 * n, 3 * n)])
    return v, f


def unit(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def test_single_triangle_hit_and_miss():
    v = np.array([[1.0, -1, -1], [1.0, 1, -1], [1.0, 0, 1]])
    f = np.array([[0, 1, 2]])
    idx = BvhIndex.build(v, f)
    t, fid = idx.intersect(np.zeros(3), [[1.0, 0, 0], [-1.0, 0, 0], [2.0, 0, 0]])
    assert t[0] == 1.0 and fid[0] == 0
    assert np.isinf(t[1]) and fid[1] == -1
    assert t[2] == 0.5


def test_nearest_of_stacked_planes():
    sq = np.array([[0, -1, -1], [0, 1, -1], [0, 1, 1], [0, -1, 1.0]])
    v = np.vstack([sq + [d, 0, 0] for d in (5.0, 2.0, 8.0)])
    f = np.array([[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7], [8, 9, 10], [8, 10, 11]])
    t, fid = BvhIndex.build(v, f).intersect(np.zeros(3), [[1.0, 0.1, 0.2]])
    assert np.isclose(t[0], 2.0) and fid[0] in (2, 3)


@pytest.mark.parametrize("seed", range(3))
def test_bvh_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    v, f = soup(rng, 2000)
    o = rng.uniform(-6, 6, (3000, 3))
    d = unit(rng, 3000) * rng.uniform(0.1, 3, (3000, 1))
    tb, fb = BvhIndex.build(v, f).intersect(o, d)
    tr, fr = brute_force_intersect(v, f, o, d)
    assert np.array_equal(fb, fr) and np.array_equal(tb, tr)
    assert (fr >= 0).mean() > 0.1


def test_axis_aligned_rays():
    rng = np.random.default_rng(9)
    v, f = soup(rng, 1000)
    d = np.repeat(np.eye(3), 200, axis=0) * np.repeat([1.0, -1.0], 300)[:, None]
    o = rng.uniform(-5, 5, (600, 3))
    tb, fb = BvhIndex.build(v, f).intersect(o, d)
    tr, fr = brute_force_intersect(v, f, o, d)
    assert np.array_equal(fb, fr) and np.array_equal(tb, tr)


@pytest.mark.parametrize("seed", range(3))
def test_angular_matches_brute_force(seed):
    rng = np.random.default_rng(seed + 10)
    v, f = soup(rng, 3000, box=10.0)
    d = unit(rng, 5000)
    ta, fa = AngularIndex.build(v, f).intersect(d)
    tr, fr = brute_force_intersect(v, f, np.zeros(3), d)
    assert np.array_equal(fa, fr) and np.array_equal(ta, tr)


def test_angular_handles_poles_and_wide_triangles():
    v = np.array([[-5, -5, 3], [5, -5, 3], [0, 6, 3], [-9, -1, -1], [9, -1, -1], [0, 9, 1.0]])
    f = np.array([[0, 1, 2], [3, 4, 5]])
    rng = np.random.default_rng(1)
    d = np.vstack([unit(rng, 2000), [[0, 0, 1.0], [0, 0, -1.0]]])
    ta, fa = AngularIndex.build(v, f).intersect(d)
    tr, fr = brute_force_intersect(v, f, np.zeros(3), d)
    assert np.array_equal(fa, fr) and np.array_equal(ta, tr)
    assert fa[-2] == 0


def test_face_ids_are_mapped():
    v = np.array([[1.0, -1, -1], [1.0, 1, -1], [1.0, 0, 1]])
    _, fid = BvhIndex.build(v, [[0, 1, 2]], face_ids=[42]).intersect(np.zeros(3), [[1.0, 0, 0]])
    _, fa = AngularIndex.build(v, [[0, 1, 2]], face_ids=[42]).intersect([[1.0, 0, 0]])
    assert fid[0] == fa[0] == 42


def test_empty_index_misses():
    t, f = BvhIndex.build(np.zeros((0, 3)), np.zeros((0, 3), int)).intersect(np.zeros(3), [[1.0, 0, 0]])
    assert np.isinf(t[0]) and f[0] == -1


def test_closed_mesh_ties_resolve_to_same_range(room_run):
    _, results = room_run
    m = results[0].mesh
    sel = np.flatnonzero(~m.vp_incident)
    d = m.points[::7] * 1.0001
    ta, fa = AngularIndex.build(m.points, m.faces[sel], face_ids=sel).intersect(d)
    tb, fb = BvhIndex.build(m.points, m.faces[sel], face_ids=sel).intersect(np.zeros(3), d)
    tr, fr = brute_force_intersect(m.points, m.faces[sel], np.zeros(3), d, face_ids=sel)
    assert np.array_equal(ta, tr) and np.array_equal(tb, tr)
    assert np.array_equal(fa >= 0, fr >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 200))
def test_bvh_property(seed, n):
    rng = np.random.default_rng(seed)
    v, f = soup(rng, n, size=1.0, box=2.0)
    o = rng.uniform(-3, 3, (200, 3))
    d = unit(rng, 200)
    tb, fb = BvhIndex.build(v, f, leaf_size=int(rng.integers(1, 9))).intersect(o, d)
    tr, fr = brute_force_intersect(v, f, o, d)
    assert np.array_equal(fb, fr) and np.array_equal(tb, tr)
