"""Single-frame boundary meshing by radial inversion and convex hulls.

Each frame is cut into azimuth sectors. Inside a sector, points are mirrored
along their rays (near becomes far), and the convex hull of the mirrored
points plus the sensor origin gives the triangle connectivity of the
original points. Faces are oriented toward the sensor, weighted by how
squarely they face it, and near-radial faces are dropped. Point normals are
the weighted mean of the adjacent face normals.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import fileio
from .hull import HullDegeneracyError, _quickhull_kernel, _STAGES
from .scan_model import ScanFrame, to_world

log = logging.getLogger(__name__)

DEFAULT_GAMMA = 10 ** 3.7
DEFAULT_SECTOR_ANGLE = math.pi / 6
DEFAULT_W_MIN = 0.05


class EmptyMeshError(RuntimeError):
    """Every sector of a frame was degenerate or empty."""


@dataclass(frozen=True)
class GhprParams:
    """Meshing parameters.

    ``sector_angle`` is snapped so that a whole number of sectors covers the
    full turn; ``w_min`` is the cull threshold for near-radial faces.
    """

    gamma: float = DEFAULT_GAMMA
    sector_angle: float = DEFAULT_SECTOR_ANGLE
    w_min: float = DEFAULT_W_MIN

    def __post_init__(self):
        if not self.gamma > 1:
            raise ValueError(f"gamma must be > 1, got {self.gamma}")
        if not 0 < self.sector_angle <= 2 * math.pi + 1e-12:
            raise ValueError(f"sector_angle must be in (0, 2*pi], got {self.sector_angle}")
        if not 0 <= self.w_min <= 1:
            raise ValueError(f"w_min must be in [0, 1], got {self.w_min}")
        k = max(1, round(2 * math.pi / self.sector_angle))
        object.__setattr__(self, "sector_angle", 2 * math.pi / k)

    @property
    def n_sectors(self) -> int:
        return max(1, round(2 * math.pi / self.sector_angle))


@dataclass
class SectorMesh:
    """Hull connectivity of one sector before and after culling.

    ``faces`` holds every hull face (global point indices; ``viewpoint`` is
    the synthetic sensor vertex). ``keep`` marks faces that survive culling.
    """

    sector: int
    viewpoint: int
    faces: np.ndarray
    face_normals: np.ndarray
    face_weights: np.ndarray
    vp_incident: np.ndarray
    keep: np.ndarray
    n_points: int

    @property
    def retained(self):
        return (self.faces[self.keep], self.face_normals[self.keep],
                self.face_weights[self.keep], self.vp_incident[self.keep])


@dataclass
class FrameMesh:
    """Triangle mesh over a frame's sensor-local points.

    Face index ``len(points)`` denotes the sensor origin. Faces incident to
    it close each sector into a solid; they carry weight 0 and are flagged in
    ``vp_incident``. ``normal_valid`` is False for points with no retained
    surface face (their ``point_normals`` row is zero).
    """

    frame_id: int
    points: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray
    face_weights: np.ndarray
    vp_incident: np.ndarray
    sector_of_face: np.ndarray
    point_normals: np.ndarray = field(default=None)
    normal_valid: np.ndarray = field(default=None)
    skipped_sectors: tuple = ()
    n_sectors: int = 1

    @property
    def viewpoint(self) -> int:
        return len(self.points)

    @property
    def surface_faces(self) -> np.ndarray:
        return self.faces[~self.vp_incident]

    def vertices_with_viewpoint(self) -> np.ndarray:
        return np.vstack([self.points, np.zeros((1, 3))])

    def sectors_with_faces(self) -> np.ndarray:
        """Boolean per sector: True if the sector contributed surface faces."""
        out = np.zeros(self.n_sectors, dtype=bool)
        out[np.unique(self.sector_of_face[~self.vp_incident])] = True
        return out


def ghpr_invert(points, gamma: float, max_norm: float | None = None) -> np.ndarray:
    """Mirror points along their rays about the origin.

    ``p' = (gamma * M - |p|) * p / |p|`` with ``M`` the largest norm (or
    ``max_norm`` when given, so sectors of one frame share the same ``M``).
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    r = np.linalg.norm(p, axis=1)
    if np.any(r <= 0):
        raise ValueError("cannot invert a point at the viewpoint (zero norm)")
    m = r.max() if max_norm is None else float(max_norm)
    return ((gamma * m - r) / r)[:, None] * p


def sector_ids(points, sector_angle: float) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    k = max(1, round(2 * math.pi / sector_angle))
    az = np.arctan2(p[:, 1], p[:, 0])
    az = np.where(az < 0, az + 2 * math.pi, az)
    return np.minimum((az / (2 * math.pi / k)).astype(np.int64), k - 1)


def partition_sectors(frame: ScanFrame | np.ndarray, sector_angle: float) -> list[np.ndarray]:
    """Split point indices into half-open azimuth bins ``[k*theta, (k+1)*theta)``."""
    pts = frame.points if isinstance(frame, ScanFrame) else frame
    k = max(1, round(2 * math.pi / sector_angle))
    sid = sector_ids(pts, sector_angle)
    order = np.argsort(sid, kind="stable")
    bounds = np.searchsorted(sid[order], np.arange(k + 1))
    return [order[bounds[i]:bounds[i + 1]] for i in range(k)]


@njit(cache=True, nogil=True)
def _orient_and_weigh(pts, faces, vp):
    """Normals toward the origin and confidence weights for hull faces."""
    nf = faces.shape[0]
    normals = np.zeros((nf, 3))
    weights = np.zeros(nf)
    vp_inc = np.zeros(nf, np.bool_)
    for f in range(nf):
        a, b, c = faces[f, 0], faces[f, 1], faces[f, 2]
        if a == vp or b == vp or c == vp:
            vp_inc[f] = True
            # rotate so the origin comes last; keeps winding
            while faces[f, 2] != vp:
                t = faces[f, 0]
                faces[f, 0] = faces[f, 1]
                faces[f, 1] = faces[f, 2]
                faces[f, 2] = t
            a, b = faces[f, 0], faces[f, 1]
            nx = pts[a, 1] * pts[b, 2] - pts[a, 2] * pts[b, 1]
            ny = pts[a, 2] * pts[b, 0] - pts[a, 0] * pts[b, 2]
            nz = pts[a, 0] * pts[b, 1] - pts[a, 1] * pts[b, 0]
            ln = np.sqrt(nx * nx + ny * ny + nz * nz)
            if ln > 0:
                normals[f, 0] = nx / ln
                normals[f, 1] = ny / ln
                normals[f, 2] = nz / ln
            continue
        ux = pts[b, 0] - pts[a, 0]
        uy = pts[b, 1] - pts[a, 1]
        uz = pts[b, 2] - pts[a, 2]
        vx = pts[c, 0] - pts[a, 0]
        vy = pts[c, 1] - pts[a, 1]
        vz = pts[c, 2] - pts[a, 2]
        nx = uy * vz - uz * vy
        ny = uz * vx - ux * vz
        nz = ux * vy - uy * vx
        ln = np.sqrt(nx * nx + ny * ny + nz * nz)
        cx = (pts[a, 0] + pts[b, 0] + pts[c, 0]) / 3.0
        cy = (pts[a, 1] + pts[b, 1] + pts[c, 1]) / 3.0
        cz = (pts[a, 2] + pts[b, 2] + pts[c, 2]) / 3.0
        lc = np.sqrt(cx * cx + cy * cy + cz * cz)
        # zero-area faces get no normal and no weight
        if ln <= 1e-12 or lc == 0.0:
            continue
        nx /= ln
        ny /= ln
        nz /= ln
        w = -(nx * cx + ny * cy + nz * cz) / lc
        if w < 0.0:
            nx, ny, nz, w = -nx, -ny, -nz, -w
            t = faces[f, 1]
            faces[f, 1] = faces[f, 2]
            faces[f, 2] = t
        normals[f, 0] = nx
        normals[f, 1] = ny
        normals[f, 2] = nz
        weights[f] = min(w, 1.0)
    return normals, weights, vp_inc


def _hull_faces(inv_with_origin: np.ndarray, eps: float | None):
    if eps is None:
        span = inv_with_origin.max(axis=0) - inv_with_origin.min(axis=0)
        eps = 1e-7 * float(np.linalg.norm(span))
    faces, status, dropped = _quickhull_kernel(inv_with_origin, eps)
    if dropped:
        log.debug("hull: %d eye points dropped at pinched horizons", dropped)
    if status:
        raise HullDegeneracyError(_STAGES[status])
    return faces


def mesh_sector(frame: ScanFrame | np.ndarray, sector, params: GhprParams = GhprParams(), *,
                sector_id: int = 0, max_norm: float | None = None, eps: float | None = None) -> SectorMesh:
    """Hull-mesh one sector; faces are mapped back to global point indices.

    Raises :class:`HullDegeneracyError` when the sector hull is degenerate
    and ``ValueError`` for fewer than 3 points; :func:`build_frame_mesh`
    turns both into skipped sectors.
    """
    pts = np.ascontiguousarray(frame.points if isinstance(frame, ScanFrame) else frame, dtype=np.float64)
    idx = np.asarray(sector, dtype=np.int64)
    if len(idx) < 3:
        raise ValueError(f"sector {sector_id} has {len(idx)} points; need at least 3")
    if max_norm is None:
        max_norm = float(np.linalg.norm(pts, axis=1).max())
    inv = ghpr_invert(pts[idx], params.gamma, max_norm)
    local = _hull_faces(np.vstack([inv, np.zeros((1, 3))]), eps)

    vp = len(pts)
    gmap = np.append(idx, vp)
    faces = gmap[local]
    normals, weights, vp_inc = _orient_and_weigh(np.vstack([pts, np.zeros((1, 3))]), faces, vp)
    keep = vp_inc | (weights >= params.w_min)
    return SectorMesh(sector_id, vp, faces, normals, weights, vp_inc, keep, len(idx))


@njit(cache=True, nogil=True)
def _accumulate_normals(n_points, faces, normals, weights, use):
    acc = np.zeros((n_points, 3))
    for f in range(faces.shape[0]):
        if not use[f]:
            continue
        w = weights[f]
        for j in range(3):
            v = faces[f, j]
            acc[v, 0] += w * normals[f, 0]
            acc[v, 1] += w * normals[f, 1]
            acc[v, 2] += w * normals[f, 2]
    return acc


def estimate_normals(mesh: FrameMesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-point unit normals from weighted adjacent surface-face normals.

    Returns ``(normals, valid)``. Points with no adjacent surface face, or a
    vanishing weighted sum, get a zero row and ``valid=False``.
    """
    n = len(mesh.points)
    use = ~mesh.vp_incident
    acc = _accumulate_normals(n, np.ascontiguousarray(mesh.faces), mesh.face_normals, mesh.face_weights, use)
    ln = np.linalg.norm(acc, axis=1)
    valid = ln >= 1e-12
    out = np.zeros_like(acc)
    out[valid] = acc[valid] / ln[valid, None]
    return out, valid


def _worker_count(workers):
    if workers is None:
        return os.cpu_count() or 1
    return max(1, int(workers))


def build_frame_mesh(frame: ScanFrame, params: GhprParams = GhprParams(), *, workers: int | None = None,
                     keep_sector_meshes: bool = False):
    """Mesh a whole frame sector by sector and estimate point normals.

    Sectors are meshed concurrently on ``workers`` threads (default: all
    cores) and merged in sector order, so output does not depend on thread
    scheduling. With ``keep_sector_meshes`` the pre-cull
    :class:`SectorMesh` list is returned too.
    """
    pts = np.ascontiguousarray(frame.points, dtype=np.float64)
    if len(pts) == 0:
        raise EmptyMeshError(f"frame {frame.frame_id} has no points")
    max_norm = float(np.linalg.norm(pts, axis=1).max())
    sectors = partition_sectors(pts, params.sector_angle)

    def run(k):
        idx = sectors[k]
        if len(idx) == 0:
            return k, None, "empty"
        try:
            return k, mesh_sector(pts, idx, params, sector_id=k, max_norm=max_norm), None
        except (HullDegeneracyError, ValueError) as exc:
            return k, None, str(exc)

    nw = min(_worker_count(workers), len(sectors))
    if nw > 1:
        with ThreadPoolExecutor(max_workers=nw) as pool:
            results = list(pool.map(run, range(len(sectors))))
    else:
        results = [run(k) for k in range(len(sectors))]

    parts, skipped, sector_meshes = [], [], []
    for k, sm, why in results:
        if sm is None:
            skipped.append(k)
            if why != "empty":
                log.warning("frame %d: sector %d skipped: %s", frame.frame_id, k, why)
            continue
        sector_meshes.append(sm)
        f, n, w, vp = sm.retained
        parts.append((f, n, w, vp, np.full(len(f), k, dtype=np.int64)))
    if not parts:
        raise EmptyMeshError(f"frame {frame.frame_id}: all {len(sectors)} sectors degenerate or empty")

    faces, normals, weights, vp_inc, sector_of_face = (np.concatenate(x) for x in zip(*parts))
    mesh = FrameMesh(frame.frame_id, pts, faces, normals, weights, vp_inc, sector_of_face,
                     skipped_sectors=tuple(skipped), n_sectors=len(sectors))
    mesh.point_normals, mesh.normal_valid = estimate_normals(mesh)
    if keep_sector_meshes:
        return mesh, sector_meshes
    return mesh


def export_mesh(mesh: FrameMesh, path, frame: ScanFrame | None = None, *, include_vp_faces: bool = False):
    """Write a frame mesh (PLY or OBJ by suffix) with per-vertex normals.

    Vertices go to world coordinates when ``frame`` supplies the pose.
    Viewpoint faces are left out unless ``include_vp_faces``.
    """
    verts = mesh.vertices_with_viewpoint()
    normals = np.vstack([mesh.point_normals, np.zeros((1, 3))])
    faces = mesh.faces if include_vp_faces else mesh.surface_faces
    if not include_vp_faces:
        verts, normals = verts[:-1], normals[:-1]
    if frame is not None:
        verts = to_world(frame, verts)
        normals = normals @ frame.pose.rotation.T
    fileio.write_mesh(path, verts, faces, normals, comments=(f"frame_id {mesh.frame_id}",))
