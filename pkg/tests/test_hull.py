import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarspace.hull import (HullDegeneracyError, brute_force_hull, default_epsilon, hull_volume,
                             quickhull)

CUBE = np.array(list(itertools.product([0.0, 1.0], repeat=3)))


def edge_counts(faces):
    e = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    _, c = np.unique(e, axis=0, return_counts=True)
    return c


def check_hull(h, pts, eps=None):
    eps = default_epsilon(pts) if eps is None else eps
    assert np.all(edge_counts(h.faces) == 2)
    V, F = len(h.vertex_indices), len(h.faces)
    assert V - len(edge_counts(h.faces)) + F == 2
    a = pts[h.faces[:, 0]]
    d = pts @ h.face_normals.T - np.einsum("ij,ij->i", h.face_normals, a)
    assert np.all(d <= eps * 10)
    cen = pts[h.vertex_indices].mean(axis=0)
    assert np.all(np.einsum("ij,ij->i", h.face_normals, a - cen) > 0)
    assert np.allclose(np.linalg.norm(h.face_normals, axis=1), 1.0)


def test_tetrahedron():
    pts = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)
    h = quickhull(pts)
    assert len(h.faces) == 4 and set(h.vertex_indices) == {0, 1, 2, 3}
    check_hull(h, pts)


def test_unit_cube():
    h = quickhull(CUBE)
    assert len(h.faces) == 12
    assert abs(hull_volume(h, CUBE) - 1.0) <= 1e-9
    check_hull(h, CUBE)


def test_corner_tetrahedron_volume():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=np.float64)
    assert abs(hull_volume(quickhull(pts), pts) - 1 / 6) <= 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_ball_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(50, 3))
    pts *= (rng.random(50) ** (1 / 3) / np.linalg.norm(pts, axis=1))[:, None]
    h = quickhull(pts)
    vi, _ = brute_force_hull(pts)
    assert np.array_equal(h.vertex_indices, vi)
    check_hull(h, pts)


@pytest.mark.parametrize("pts,stage", [
    (np.zeros((5, 3)), "coincident"),
    (np.column_stack([np.arange(6.0), np.zeros(6), np.zeros(6)]), "collinear"),
    (np.column_stack([np.arange(6.0), np.arange(6.0) ** 2, np.zeros(6)]), "coplanar"),
])
def test_degenerate_inputs_name_the_stage(pts, stage):
    with pytest.raises(HullDegeneracyError) as exc:
        quickhull(pts)
    assert stage in exc.value.stage


def test_too_few_points():
    with pytest.raises(HullDegeneracyError):
        quickhull(np.eye(3))


def test_deterministic(rng):
    pts = rng.normal(size=(500, 3))
    a, b = quickhull(pts), quickhull(pts.copy())
    assert np.array_equal(a.faces, b.faces)


point_sets = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s)).flatmap(
    lambda r: st.integers(5, 60).map(lambda n: r.normal(size=(n, 3))))


@settings(max_examples=60, deadline=None)
@given(point_sets)
def test_invariants_random(pts):
    check_hull(quickhull(pts), pts)


@settings(max_examples=40, deadline=None)
@given(point_sets, st.floats(0.01, 100.0))
def test_volume_scales_cubically(pts, s):
    v1 = hull_volume(quickhull(pts), pts)
    v2 = hull_volume(quickhull(pts * s), pts * s)
    assert abs(v2 - v1 * s ** 3) <= 1e-6 * v1 * s ** 3


@settings(max_examples=40, deadline=None)
@given(point_sets, st.integers(0, 2**32 - 1))
def test_interior_point_leaves_faces_unchanged(pts, seed):
    h = quickhull(pts)
    r = np.random.default_rng(seed)
    w = r.random(4)
    w /= w.sum()
    cen = pts[h.vertex_indices].mean(axis=0)
    inner = cen + 0.5 * (w @ pts[h.vertex_indices[:4]] - cen)
    h2 = quickhull(np.vstack([pts, inner]))
    canon = lambda f: {tuple(sorted(t)) for t in f.tolist()}
    assert canon(h2.faces) == canon(h.faces)


@settings(max_examples=40, deadline=None)
@given(point_sets, st.integers(0, 2**32 - 1))
def test_volume_dominates_any_tetrahedron(pts, seed):
    v = hull_volume(quickhull(pts), pts)
    idx = np.random.default_rng(seed).choice(len(pts), 4, replace=False)
    a, b, c, d = pts[idx]
    assert v >= abs(np.dot(b - a, np.cross(c - a, d - a))) / 6 - 1e-12
