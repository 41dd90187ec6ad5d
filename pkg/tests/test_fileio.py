import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lidarspace import fileio
from lidarspace.fileio import ParseError

finite32 = st.floats(-1e4, 1e4, allow_nan=False, width=32)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 40), st.just(3)), elements=finite32))
def test_binary_ply_round_trip_is_bitwise(tmp_path_factory, pts):
    path = tmp_path_factory.mktemp("ply") / "c.ply"
    fileio.write_ply(path, pts.astype(np.float64), comments=("timestamp 1.5",))
    ply = fileio.read_ply(path)
    assert ply.fmt == "binary_little_endian"
    assert np.array_equal(ply.vertices, pts.astype(np.float64))
    assert ply.comment_value("timestamp") == "1.5"


def test_ascii_ply_with_faces_and_normals(tmp_path):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=np.float64)
    f = np.array([[0, 1, 2], [0, 1, 3]])
    path = tmp_path / "m.ply"
    fileio.write_ply(path, v, f, normals=v, binary=False)
    ply = fileio.read_ply(path)
    assert ply.fmt == "ascii"
    assert np.array_equal(ply.vertices, v)
    assert np.array_equal(ply.faces, f)
    assert np.array_equal(ply.elements["vertex"]["nx"], v[:, 0])


def test_big_endian_ply(tmp_path):
    pts = np.array([[1.5, -2.0, 3.25], [4.0, 5.0, 6.0]], dtype=">f4")
    head = b"ply\nformat binary_big_endian 1.0\nelement vertex 2\n" \
           b"property float x\nproperty float y\nproperty float z\nend_header\n"
    path = tmp_path / "be.ply"
    path.write_bytes(head + pts.tobytes())
    assert np.array_equal(fileio.read_ply(path).vertices, pts.astype(np.float64))


def test_truncated_binary_ply_reports_offset(tmp_path):
    path = tmp_path / "t.ply"
    fileio.write_ply(path, np.ones((5, 3)))
    raw = path.read_bytes()
    path.write_bytes(raw[:-7])
    with pytest.raises(ParseError) as exc:
        fileio.read_ply(path)
    assert "@byte" in str(exc.value)


def test_garbled_ascii_ply_reports_line(tmp_path):
    path = tmp_path / "g.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                    "property float z\nend_header\n1 2 3\n4 five 6\n")
    with pytest.raises(ParseError) as exc:
        fileio.read_ply(path)
    assert exc.value.line == 9


def test_not_a_ply(tmp_path):
    path = tmp_path / "x.ply"
    path.write_text("hello\n")
    with pytest.raises(ParseError):
        fileio.read_ply(path)


def test_missing_file_is_parse_error(tmp_path):
    with pytest.raises(ParseError):
        fileio.read_ply(tmp_path / "nope.ply")


def test_xyz_round_trip_and_errors(tmp_path):
    pts = np.random.default_rng(0).normal(size=(20, 3))
    path = tmp_path / "a.xyz"
    fileio.write_xyz(path, pts)
    assert np.array_equal(fileio.read_xyz(path), pts)
    path.write_text("1 2 3\n# comment\n\n1 2\n")
    with pytest.raises(ParseError) as exc:
        fileio.read_xyz(path)
    assert exc.value.line == 4


def test_kitti_bin_drops_intensity(tmp_path):
    pts = np.arange(12, dtype=np.float64).reshape(4, 3)
    path = tmp_path / "0.bin"
    fileio.write_kitti_bin(path, pts, intensity=np.full(4, 0.7))
    assert np.array_equal(fileio.read_kitti_bin(path), pts)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(ParseError):
        fileio.read_kitti_bin(path)


def test_tum_round_trip(tmp_path):
    t = np.array([0.0, 0.1, 0.2])
    pos = np.arange(9, dtype=np.float64).reshape(3, 3) / 7
    q = np.tile([0.0, 0.0, 0.0, 1.0], (3, 1))
    path = tmp_path / "traj.txt"
    fileio.write_tum(path, t, pos, q)
    t2, p2, q2 = fileio.read_tum(path)
    assert np.array_equal(t2, t) and np.array_equal(p2, pos) and np.array_equal(q2, q)


def test_tum_bad_row(tmp_path):
    path = tmp_path / "traj.txt"
    path.write_text("0 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 1\n")
    with pytest.raises(ParseError) as exc:
        fileio.read_tum(path)
    assert exc.value.line == 2


def test_obj_round_trip(tmp_path):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=np.float64)
    f = np.array([[0, 1, 2]])
    path = tmp_path / "m.obj"
    fileio.write_mesh(path, v, f, normals=np.tile([0.0, 0.0, 1.0], (3, 1)))
    v2, f2 = fileio.read_obj(path)
    assert np.array_equal(v2, v) and np.array_equal(f2, f)
    with pytest.raises(ValueError):
        fileio.write_mesh(tmp_path / "m.stl", v, f)
