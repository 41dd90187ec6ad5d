import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarspace.lidar_sim import static_surface_distance
from lidarspace.los_field import DynamicMask, Label
from lidarspace.scan_model import Pose, ScanFrame
from lidarspace.static_recon import (AREA_EPS, TriangleMesh, TsdfGrid, default_trunc, extract_mesh,
                                     grid_from_sdf, integrate)

L = 0.5


def mask(n, label=Label.STATIC):
    return DynamicMask(0, np.full(n, label, dtype=np.uint8))


def frame_at(points, pose=None):
    return ScanFrame(0, 0.0, pose or Pose.identity(), points)


def test_default_truncation():
    assert default_trunc(0.5) == 0.75 and TsdfGrid(0.5).trunc == 0.75


def test_point_at_voxel_centre():
    g = TsdfGrid(L)
    f = frame_at([[1.25, 1.25, 1.25]])
    assert integrate(g, f, np.array([[0.0, 0.0, 1.0]]), mask(1)) == 1
    assert g.get([2, 2, 2])["sdf"] == 0.0
    assert g.get([2, 2, 3])["sdf"] == pytest.approx(L)
    assert g.get([2, 2, 1])["sdf"] == pytest.approx(-L)
    assert g.get([2, 2, 4]) is None
    tight = TsdfGrid(L, trunc=0.3)
    integrate(tight, f, np.array([[0.0, 0.0, 1.0]]), mask(1), tau=0.75)
    assert tight.get([2, 2, 3])["sdf"] == pytest.approx(0.3)


def test_dynamic_points_leave_grid_bitwise_unchanged(room_run, room_sims):
    pipe, results = room_run
    g = pipe.tsdf.copy()
    before = [x.copy() for x in g.state()]
    s = room_sims[7]
    assert integrate(g, s.frame, results[7].mesh, mask(len(s.frame), Label.DYNAMIC)) == 0
    for a, b in zip(before, g.state()):
        assert np.array_equal(a, b)


def test_null_normals_and_radius_skip_points():
    g = TsdfGrid(L)
    f = frame_at([[1.0, 0.0, 0.0], [0.0, 5.0, 0.0], [40.0, 0.0, 0.0]])
    n = np.array([[1.0, 0, 0], [0, 0, 0], [1.0, 0, 0]])
    assert integrate(g, f, n, mask(3), radius=30.0) == 1
    assert integrate(g, f, (n, np.array([True, False, True])), mask(3)) == 2
    with pytest.raises(ValueError):
        integrate(g, f, n, mask(2))


def test_normals_are_rotated_to_world():
    q = np.array([0.0, 0.0, np.sin(np.pi / 4), np.cos(np.pi / 4)])
    g = TsdfGrid(L)
    integrate(g, frame_at([[2.0, 0.0, 0.0]], Pose([0.0, 0.0, 0.0], q)), np.array([[1.0, 0.0, 0.0]]), mask(1))
    key = np.floor(np.array([0.0, 2.0, 0.0]) / L).astype(int)
    assert np.allclose(g.get(key)["mean_normal"], [0, 1, 0], atol=1e-12)


finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(finite, finite, finite, finite, finite, finite), min_size=1, max_size=30))
def test_record_invariants(rows):
    a = np.array(rows)
    g = TsdfGrid(L)
    integrate(g, frame_at(a[:, :3] + 10.0), a[:, 3:], mask(len(a)))
    keys, sdf, w, cnt, mean_p, mean_n = g.to_arrays()
    ok = ~np.isnan(sdf)
    assert np.all(np.abs(sdf[ok]) <= g.trunc) and np.all(w >= 0)
    nn = np.linalg.norm(mean_n, axis=1)
    assert np.all(np.abs(nn[ok] - 1) <= 1e-9)
    assert np.all(cnt > 0)


def test_frame_order_invariance(room_run, room_sims):
    _, results = room_run
    fwd, rev = TsdfGrid(L), TsdfGrid(L)
    pairs = list(zip(room_sims[:8], results[:8]))
    for s, r in pairs:
        integrate(fwd, s.frame, r.mesh, r.mask)
    for s, r in reversed(pairs):
        integrate(rev, s.frame, r.mesh, r.mask)
    ka, sa, *_ = fwd.to_arrays()
    kb, sb, *_ = rev.to_arrays()
    assert np.array_equal(ka, kb)
    assert np.nanmax(np.abs(sa - sb)) <= 1e-6
    assert np.array_equal(np.isnan(sa), np.isnan(sb))


def sphere_grid(radius=3.0, n=20, trunc=0.75):
    idx = np.indices((n, n, n)).transpose(1, 2, 3, 0)
    c = (idx - n // 2 + 0.5) * L
    sdf = np.clip(np.linalg.norm(c, axis=-1) - radius, -trunc, trunc)
    return grid_from_sdf(sdf, L, lo=(-n // 2,) * 3, trunc=trunc)


def test_sphere_extraction_radius():
    m = extract_mesh(sphere_grid())
    r = np.linalg.norm(m.vertices, axis=1)
    assert len(m) > 100 and np.mean(np.abs(r - 3.0)) < L / 2
    outward = np.einsum("ij,ij->i", m.normals, m.vertices / r[:, None])
    assert np.mean(outward > 0) > 0.99


def test_all_positive_grid_is_empty():
    assert len(extract_mesh(grid_from_sdf(np.full((4, 4, 4), 0.3), L))) == 0
    assert len(extract_mesh(TsdfGrid(L))) == 0


def test_plane_normals_within_two_degrees():
    n = np.array([0.2, -0.1, 1.0])
    n /= np.linalg.norm(n)
    idx = np.indices((12, 12, 12)).transpose(1, 2, 3, 0)
    c = (idx + 0.5) * L
    sdf = np.clip((c - [3.0, 3.0, 2.9]) @ n, -0.75, 0.75)
    m = extract_mesh(grid_from_sdf(sdf, L))
    assert len(m) > 0
    cos = m.normals @ n
    assert np.all(cos >= np.cos(np.radians(2.0)))
    # marching cubes interpolates in float32
    assert np.all(np.abs((m.vertices - [3.0, 3.0, 2.9]) @ n) < 1e-6)


def test_unweighted_cells_are_not_polygonised():
    idx = np.indices((10, 10, 10)).transpose(1, 2, 3, 0)
    sdf = np.clip((idx[..., 2] + 0.5) * L - 2.6, -0.75, 0.75).astype(np.float64)
    full = extract_mesh(grid_from_sdf(sdf, L))
    holed = sdf.copy()
    holed[4, 4, :] = np.nan
    part = extract_mesh(grid_from_sdf(holed, L))
    assert 0 < len(part) < len(full)
    xy = part.vertices[:, :2] / L - 0.5
    assert not np.any((xy[:, 0] > 3) & (xy[:, 0] < 5) & (xy[:, 1] > 3) & (xy[:, 1] < 5))


def test_no_degenerate_triangles(room_run):
    pipe, _ = room_run
    m = pipe.static_mesh()
    assert len(m) > 0 and np.all(m.face_areas() > AREA_EPS)
    assert np.allclose(np.linalg.norm(m.normals, axis=1), 1.0)


def test_room_vertices_near_walls(room_run, room_scene):
    pipe, _ = room_run
    m = pipe.static_mesh()
    d = static_surface_distance(room_scene, m.vertices)
    assert np.mean(d <= 1.5 * L) >= 0.95


def test_dump_and_write(tmp_path, room_run):
    pipe, _ = room_run
    pipe.tsdf.dump_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "i,j,k,sdf,weight" and len(lines) - 1 == len(pipe.tsdf)
    m = pipe.static_mesh()
    m.write(tmp_path / "m.ply")
    m.write(tmp_path / "m.obj")
    assert TriangleMesh.empty().face_areas().shape == (0,)
