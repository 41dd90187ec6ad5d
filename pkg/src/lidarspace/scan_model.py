"""Geometric types shared by every stage: poses, scan frames, trajectories.

Points are stored in sensor-local coordinates; world coordinates are
computed on demand with :func:`to_world`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from . import fileio
from .fileio import ParseError

QUAT_TOL = 1e-9
MIN_POINT_NORM = 1e-6


class AssociationError(ValueError):
    """A cloud timestamp has no trajectory pose within tolerance."""


@dataclass(frozen=True, eq=False)
class Pose:
    """World-from-sensor rigid transform.

    ``quaternion`` is ``(qx, qy, qz, qw)``, scalar last (TUM order).
    """

    position: np.ndarray
    quaternion: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))

    def __post_init__(self):
        pos = np.array(self.position, dtype=np.float64).reshape(3)
        q = np.array(self.quaternion, dtype=np.float64).reshape(4)
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(q)):
            raise ValueError("pose has non-finite components")
        if abs(np.linalg.norm(q) - 1.0) > QUAT_TOL:
            raise ValueError(f"quaternion norm {np.linalg.norm(q):.12g} is not 1")
        pos.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "quaternion", q)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3))

    @classmethod
    def from_rotation(cls, position, rotation: Rotation) -> "Pose":
        q = rotation.as_quat()
        return cls(position, q / np.linalg.norm(q))

    @cached_property
    def rotation(self) -> np.ndarray:
        """3x3 world-from-sensor rotation matrix."""
        return Rotation.from_quat(self.quaternion).as_matrix()

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.position, other.position) and np.array_equal(self.quaternion, other.quaternion)

    def __hash__(self):
        return hash((self.position.tobytes(), self.quaternion.tobytes()))


def _as_pose(obj) -> Pose:
    return obj.pose if isinstance(obj, ScanFrame) else obj


def to_world(frame_or_pose, p) -> np.ndarray:
    """Map sensor-local point(s) ``p`` (shape ``(3,)`` or ``(N, 3)``) to world."""
    pose = _as_pose(frame_or_pose)
    p = np.asarray(p, dtype=np.float64)
    return p @ pose.rotation.T + pose.position


def to_local(frame_or_pose, p) -> np.ndarray:
    pose = _as_pose(frame_or_pose)
    p = np.asarray(p, dtype=np.float64)
    return (p - pose.position) @ pose.rotation


@dataclass(frozen=True, eq=False)
class ScanFrame:
    """One LiDAR sweep: sensor pose plus sensor-local points ``(N, 3)``.

    ``source_index`` maps each point to its row in the file it was read
    from (``source_size`` rows), so per-point outputs can be written back
    at file length after range filtering. ``None`` means rows match.
    """

    frame_id: int
    timestamp: float
    pose: Pose
    points: np.ndarray
    source_index: np.ndarray | None = None
    source_size: int | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError(f"frame {self.frame_id}: non-finite point coordinates")
        if len(pts) and np.min(np.einsum("ij,ij->i", pts, pts)) <= MIN_POINT_NORM ** 2:
            raise ValueError(f"frame {self.frame_id}: point coincident with the sensor")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "frame_id", int(self.frame_id))
        object.__setattr__(self, "timestamp", float(self.timestamp))
        if self.source_index is not None:
            idx = np.asarray(self.source_index, dtype=np.int64)
            size = int(self.source_size) if self.source_size is not None else len(idx)
            if idx.shape != (len(pts),) or (len(idx) and (idx.min() < 0 or idx.max() >= size)):
                raise ValueError(f"frame {self.frame_id}: source_index does not match the points")
            object.__setattr__(self, "source_index", idx)
            object.__setattr__(self, "source_size", size)

    def to_source(self, values, fill):
        """Scatter per-point ``values`` back to file rows, ``fill`` elsewhere."""
        values = np.asarray(values)
        if self.source_index is None:
            return values
        out = np.full((self.source_size,) + values.shape[1:], fill, dtype=values.dtype)
        out[self.source_index] = values
        return out

    def __len__(self):
        return len(self.points)

    @property
    def origin(self) -> np.ndarray:
        return self.pose.position

    def world_points(self) -> np.ndarray:
        return to_world(self.pose, self.points)


class Trajectory:
    """Timestamped sensor poses with strictly increasing timestamps."""

    def __init__(self, timestamps, positions, quaternions):
        t = np.array(timestamps, dtype=np.float64).reshape(-1)
        pos = np.array(positions, dtype=np.float64).reshape(-1, 3)
        q = np.array(quaternions, dtype=np.float64).reshape(-1, 4)
        if not (len(t) == len(pos) == len(q)) or len(t) == 0:
            raise ValueError("trajectory arrays must be non-empty and of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        norms = np.linalg.norm(q, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("trajectory quaternions must be unit length")
        # file precision is ~1e-9; renormalise so Pose accepts them
        q = q / norms[:, None]
        self.timestamps, self.positions, self.quaternions = t, pos, q
        for a in (t, pos, q):
            a.flags.writeable = False

    @classmethod
    def from_poses(cls, timestamps, poses) -> "Trajectory":
        return cls(timestamps, [p.position for p in poses], [p.quaternion for p in poses])

    @classmethod
    def read(cls, path) -> "Trajectory":
        return cls(*fileio.read_tum(path))

    def write(self, path):
        fileio.write_tum(path, self.timestamps, self.positions, self.quaternions)

    def __len__(self):
        return len(self.timestamps)

    def __getitem__(self, i) -> tuple[float, Pose]:
        return float(self.timestamps[i]), Pose(self.positions[i], self.quaternions[i])

    @property
    def start(self) -> float:
        return float(self.timestamps[0])

    @property
    def end(self) -> float:
        return float(self.timestamps[-1])

    def nearest(self, t: float) -> tuple[int, float]:
        """Index of the pose nearest to ``t`` (earlier wins ties) and its offset."""
        ts = self.timestamps
        j = int(np.searchsorted(ts, t))
        cands = [k for k in (j - 1, j) if 0 <= k < len(ts)]
        k = min(cands, key=lambda k: (abs(ts[k] - t), k))
        return k, float(abs(ts[k] - t))

    def interpolate(self, t: float) -> Pose:
        """Pose at time ``t``: linear position, slerp rotation, clamped at the ends."""
        ts = self.timestamps
        if len(ts) == 1 or t <= ts[0]:
            return self[0][1]
        if t >= ts[-1]:
            return self[len(ts) - 1][1]
        j = int(np.searchsorted(ts, t, side="right"))
        t0, t1 = ts[j - 1], ts[j]
        a = (t - t0) / (t1 - t0)
        pos = (1 - a) * self.positions[j - 1] + a * self.positions[j]
        rot = Slerp([t0, t1], Rotation.from_quat(self.quaternions[j - 1:j + 1]))([t])[0]
        return Pose.from_rotation(pos, rot)


_FORMAT_SUFFIX = {"ply": ".ply", "xyz": ".xyz", "kitti_bin": ".bin"}


def _read_cloud(path: Path, fmt: str):
    """Return ``(points, timestamp_or_None, frame_id_or_None)``."""
    if fmt == "ply":
        ply = fileio.read_ply(path)
        try:
            pts = ply.vertices
        except KeyError:
            raise ParseError(path, "PLY has no vertex x/y/z properties") from None
        ts = ply.comment_value("timestamp")
        fid = ply.comment_value("frame_id")
        try:
            return pts, None if ts is None else float(ts), None if fid is None else int(fid)
        except ValueError:
            raise ParseError(path, "bad timestamp/frame_id comment", line=1) from None
    if fmt == "xyz":
        return fileio.read_xyz(path), None, None
    if fmt == "kitti_bin":
        return fileio.read_kitti_bin(path), None, None
    raise ValueError(f"unknown cloud format {fmt!r}")


def _read_timestamp_index(path: Path, names: list[str]) -> dict[str, float] | None:
    """Parse ``timestamps.txt`` (``name t`` rows) or KITTI ``times.txt`` (``t`` rows)."""
    for candidate in ("timestamps.txt", "times.txt"):
        idx = path / candidate
        if not idx.exists():
            continue
        out = {}
        rows = [ln.split() for ln in idx.read_text().splitlines()]
        rows = [(i, r) for i, r in enumerate(rows, start=1) if r and not r[0].startswith("#")]
        for i, (lineno, r) in enumerate(rows):
            try:
                if len(r) == 1:
                    if i >= len(names):
                        raise ParseError(idx, "more timestamps than cloud files", line=lineno)
                    out[names[i]] = float(r[0])
                else:
                    out[r[0]] = float(r[1])
            except ValueError:
                raise ParseError(idx, f"bad timestamp row {' '.join(r)!r}", line=lineno) from None
        return out
    return None


def _natural_key(name: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", name)]


@dataclass
class FrameLoadError:
    """Placeholder yielded by :func:`iter_frames` for a file that failed to load."""

    ordinal: int
    path: Path
    error: Exception


def iter_frames(cloud_path, traj_path, format: str = "ply", *, tolerance: float = 0.05,
                min_range: float = 0.5, max_range: float = 120.0, skip_errors: bool = False):
    """Lazily load frames in file order; see :func:`load_frames`.

    With ``skip_errors`` a file that cannot be parsed or associated yields a
    :class:`FrameLoadError` instead of raising, so a long run survives one
    corrupt frame. Problems with the directory or trajectory always raise.
    """
    if format not in _FORMAT_SUFFIX:
        raise ValueError(f"unknown cloud format {format!r}; expected one of {sorted(_FORMAT_SUFFIX)}")
    cloud_path = Path(cloud_path)
    traj = Trajectory.read(traj_path)
    if cloud_path.is_dir():
        files = sorted((p for p in cloud_path.iterdir() if p.suffix.lower() == _FORMAT_SUFFIX[format]),
                       key=lambda p: _natural_key(p.name))
        index = _read_timestamp_index(cloud_path, [p.name for p in files])
    elif cloud_path.exists():
        files, index = [cloud_path], None
    else:
        raise ParseError(cloud_path, "no such file or directory")
    if not files:
        raise ParseError(cloud_path, f"no {format} files found")

    last_id = None
    for ordinal, path in enumerate(files):
        try:
            pts, ts, fid = _read_cloud(path, format)
            if ts is None and index is not None:
                if path.name not in index:
                    raise ParseError(path, "file missing from timestamp index")
                ts = index[path.name]
            if ts is None:
                if ordinal >= len(traj):
                    raise AssociationError(f"{path}: no timestamp and no trajectory pose #{ordinal}")
                ts = traj.start if len(files) == 1 else float(traj.timestamps[ordinal])
            k, dt = traj.nearest(ts)
            if dt > tolerance:
                raise AssociationError(
                    f"{path}: nearest pose is {dt:.3f} s from frame time {ts:.6f} (tolerance {tolerance} s)")
            fid = ordinal if fid is None else fid
            if last_id is not None and fid <= last_id:
                raise ParseError(path, f"frame id {fid} does not follow {last_id}")
        except (ParseError, AssociationError) as exc:
            if not skip_errors:
                raise
            yield FrameLoadError(ordinal, path, exc)
            continue
        last_id = fid
        r = np.linalg.norm(pts, axis=1)
        keep = (r >= max(min_range, MIN_POINT_NORM * 2)) & (r <= max_range) & np.all(np.isfinite(pts), axis=1)
        yield ScanFrame(fid, ts, traj[k][1], pts[keep], np.flatnonzero(keep), len(pts))


def load_frames(cloud_path, traj_path, format: str = "ply", *, tolerance: float = 0.05,
                min_range: float = 0.5, max_range: float = 120.0) -> list[ScanFrame]:
    """Load scan frames and attach trajectory poses.

    ``cloud_path`` is one cloud file or a directory of them (sorted by natural
    order). Frame timestamps come from a ``timestamp`` PLY comment, a
    ``timestamps.txt``/``times.txt`` index in the directory, or, failing both,
    the trajectory timestamp of the same ordinal. Each frame takes the pose
    nearest in time, which must lie within ``tolerance`` seconds. Frame ids
    must increase in file order.

    Points outside ``[min_range, max_range]`` are dropped, as are points
    coincident with the sensor.
    """
    return list(iter_frames(cloud_path, traj_path, format, tolerance=tolerance,
                            min_range=min_range, max_range=max_range))


def write_frame_ply(path, frame: ScanFrame, binary: bool = True):
    """Write a frame as PLY with ``timestamp``/``frame_id`` header comments."""
    fileio.write_ply(path, frame.points, comments=(f"timestamp {frame.timestamp!r}",
                                                  f"frame_id {frame.frame_id}"), binary=binary)
