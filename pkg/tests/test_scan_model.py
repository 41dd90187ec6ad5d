import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from lidarspace import fileio
from lidarspace.fileio import ParseError
from lidarspace.scan_model import (AssociationError, FrameLoadError, Pose, ScanFrame, Trajectory,
                                   iter_frames, load_frames, to_local, to_world, write_frame_ply)

coord = st.floats(-1e3, 1e3, allow_nan=False)
unit_q = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 4).filter(lambda q: np.linalg.norm(q) > 1e-3)


def _pose(pos, q):
    q = np.asarray(q, dtype=np.float64)
    return Pose(pos, q / np.linalg.norm(q))


def _one_pose_traj(path, t=0.0):
    fileio.write_tum(path, [t], [[0.0, 0.0, 0.0]], [[0.0, 0.0, 0.0, 1.0]])


def test_to_world_identity_and_translation():
    f = ScanFrame(0, 0.0, Pose.identity(), [[1.0, 2.0, 3.0]])
    assert np.array_equal(to_world(f, [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])
    assert np.array_equal(to_world(Pose([10.0, 0.0, 0.0]), [1.0, 0.0, 0.0]), [11.0, 0.0, 0.0])


@settings(max_examples=200, deadline=None)
@given(st.tuples(coord, coord, coord), unit_q, st.tuples(coord, coord, coord))
def test_to_local_inverts_to_world(pos, q, p):
    pose = _pose(pos, q)
    assert np.allclose(to_local(pose, to_world(pose, p)), p, atol=1e-9, rtol=0)


def test_round_trip_vectorised_10k(rng):
    rot = Rotation.random(100, random_state=1)
    for k in range(100):
        pose = Pose.from_rotation(rng.uniform(-100, 100, 3), rot[k])
        p = rng.uniform(-100, 100, (100, 3))
        assert np.max(np.abs(to_local(pose, to_world(pose, p)) - p)) <= 1e-9


def test_pose_rejects_non_unit_quaternion():
    with pytest.raises(ValueError):
        Pose([0, 0, 0], [0, 0, 0, 1.001])
    with pytest.raises(ValueError):
        Pose([0, np.nan, 0])


def test_scanframe_rejects_points_at_sensor():
    with pytest.raises(ValueError):
        ScanFrame(0, 0.0, Pose.identity(), [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])


def test_trajectory_requires_increasing_time():
    q = np.tile([0.0, 0.0, 0.0, 1.0], (2, 1))
    with pytest.raises(ValueError):
        Trajectory([1.0, 1.0], np.zeros((2, 3)), q)


def test_trajectory_nearest_and_interpolate():
    q = np.array([[0, 0, 0, 1.0], [0, 0, np.sin(np.pi / 4), np.cos(np.pi / 4)]])
    tr = Trajectory([0.0, 1.0], [[0, 0, 0], [2, 0, 0]], q)
    assert tr.nearest(0.5) == (0, 0.5)
    mid = tr.interpolate(0.5)
    assert np.allclose(mid.position, [1, 0, 0])
    assert np.isclose(Rotation.from_quat(mid.quaternion).as_euler("zyx")[0], np.pi / 4)
    assert tr.interpolate(-3) == tr[0][1] and tr.interpolate(9) == tr[1][1]


def test_minimal_ingest(tmp_path):
    pts = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]])
    fileio.write_ply(tmp_path / "a.ply", pts)
    _one_pose_traj(tmp_path / "traj.txt")
    frames = load_frames(tmp_path / "a.ply", tmp_path / "traj.txt")
    assert len(frames) == 1 and len(frames[0]) == 3
    assert np.array_equal(frames[0].points, pts)


def test_association_outside_tolerance(tmp_path):
    fileio.write_ply(tmp_path / "a.ply", np.ones((3, 3)), comments=("timestamp 1.00",))
    _one_pose_traj(tmp_path / "traj.txt", t=1.06)
    with pytest.raises(AssociationError):
        load_frames(tmp_path / "a.ply", tmp_path / "traj.txt")
    _one_pose_traj(tmp_path / "traj.txt", t=1.04)
    assert len(load_frames(tmp_path / "a.ply", tmp_path / "traj.txt")) == 1


def test_simulated_sequence_round_trip_is_bitwise(tmp_path, room_sims):
    d = tmp_path / "frames"
    d.mkdir()
    sims = room_sims[:5]
    for s in sims:
        write_frame_ply(d / f"{s.frame.frame_id:06d}.ply", s.frame)
    Trajectory.from_poses([s.frame.timestamp for s in sims], [s.frame.pose for s in sims]).write(tmp_path / "t.txt")
    frames = load_frames(d, tmp_path / "t.txt")
    assert [f.frame_id for f in frames] == [s.frame.frame_id for s in sims]
    for f, s in zip(frames, sims):
        assert np.array_equal(f.points, s.frame.points)
        assert f.timestamp == s.frame.timestamp
        assert np.array_equal(f.pose.position, s.frame.pose.position)


def test_range_filter_and_origin_points(tmp_path):
    pts = np.array([[0.0, 0.0, 0.0], [0.3, 0.0, 0.0], [5.0, 0.0, 0.0], [200.0, 0.0, 0.0]])
    fileio.write_ply(tmp_path / "a.ply", pts)
    _one_pose_traj(tmp_path / "traj.txt")
    f = load_frames(tmp_path / "a.ply", tmp_path / "traj.txt")[0]
    assert np.array_equal(f.points, [[5.0, 0.0, 0.0]])
    f = load_frames(tmp_path / "a.ply", tmp_path / "traj.txt", min_range=0.0, max_range=np.inf)[0]
    assert len(f) == 3
    assert np.all(np.linalg.norm(f.points, axis=1) > 1e-6)


def test_xyz_and_kitti_with_timestamp_index(tmp_path):
    pts = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    for name in ("0.xyz", "1.xyz"):
        fileio.write_xyz(tmp_path / name, pts)
    (tmp_path / "timestamps.txt").write_text("0.xyz 0.0\n1.xyz 0.1\n")
    fileio.write_tum(tmp_path / "traj.txt", [0.0, 0.1], [[0, 0, 0], [1, 0, 0]], [[0, 0, 0, 1.0]] * 2)
    frames = load_frames(tmp_path, tmp_path / "traj.txt", "xyz")
    assert [f.timestamp for f in frames] == [0.0, 0.1]
    assert np.array_equal(frames[1].pose.position, [1, 0, 0])
    kd = tmp_path / "kitti"
    kd.mkdir()
    fileio.write_kitti_bin(kd / "000000.bin", pts)
    (kd / "times.txt").write_text("0.1\n")
    assert load_frames(kd, tmp_path / "traj.txt", "kitti_bin")[0].timestamp == 0.1


def test_natural_order_and_stable_reload(tmp_path):
    for i in (10, 2, 1):
        fileio.write_xyz(tmp_path / f"f{i}.xyz", np.full((2, 3), float(i)))
    fileio.write_tum(tmp_path / "traj.txt", [0.0, 0.1, 0.2], np.zeros((3, 3)), [[0, 0, 0, 1.0]] * 3)
    a = load_frames(tmp_path, tmp_path / "traj.txt", "xyz")
    b = load_frames(tmp_path, tmp_path / "traj.txt", "xyz")
    assert [f.points[0, 0] for f in a] == [1.0, 2.0, 10.0]
    assert [f.frame_id for f in a] == [f.frame_id for f in b] == [0, 1, 2]


def test_non_increasing_frame_ids(tmp_path):
    d = tmp_path / "frames"
    d.mkdir()
    for name, fid in (("a.ply", 5), ("b.ply", 5)):
        fileio.write_ply(d / name, np.ones((3, 3)), comments=("timestamp 0.0", f"frame_id {fid}"))
    _one_pose_traj(tmp_path / "traj.txt")
    with pytest.raises(ParseError):
        load_frames(d, tmp_path / "traj.txt")


def test_skip_errors_yields_placeholder(tmp_path):
    d = tmp_path / "frames"
    d.mkdir()
    fileio.write_ply(d / "0.ply", np.ones((3, 3)), comments=("timestamp 0.0",))
    (d / "1.ply").write_text("garbage")
    fileio.write_ply(d / "2.ply", np.ones((3, 3)), comments=("timestamp 0.0", "frame_id 2"))
    _one_pose_traj(tmp_path / "traj.txt")
    out = list(iter_frames(d, tmp_path / "traj.txt", skip_errors=True))
    assert isinstance(out[1], FrameLoadError) and out[1].ordinal == 1
    assert [o.frame_id for o in (out[0], out[2])] == [0, 2]


def test_unknown_format_and_missing_path(tmp_path):
    _one_pose_traj(tmp_path / "traj.txt")
    with pytest.raises(ValueError):
        load_frames(tmp_path, tmp_path / "traj.txt", "las")
    with pytest.raises(ParseError):
        load_frames(tmp_path / "missing", tmp_path / "traj.txt")
