"""Mean-plane TSDF over static points and marching-cubes extraction.

Each voxel keeps running sums of the static points and normals that fell
within the truncation distance of its centre. Its signed distance is the
offset of the centre from the mean plane, clamped to ``[-trunc, trunc]``.
Sums rather than incremental means keep integration order-stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np
from skimage import measure

from .fileio import write_mesh
from .frame_mesh import FrameMesh
from .los_field import DynamicMask, Label
from .scan_model import ScanFrame

AREA_EPS = 1e-12
_NORMAL_EPS = 1e-12


def default_trunc(l_vox: float) -> float:
    return 1.5 * l_vox


@dataclass
class TriangleMesh:
    """World-frame triangle mesh with per-vertex normals."""

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)))

    def __len__(self):
        return len(self.faces)

    def face_areas(self) -> np.ndarray:
        a = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(a[:, 1] - a[:, 0], a[:, 2] - a[:, 0]), axis=1)

    def face_normals(self) -> np.ndarray:
        a = self.vertices[self.faces]
        n = np.cross(a[:, 1] - a[:, 0], a[:, 2] - a[:, 0])
        return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)

    def write(self, path, comments=()):
        """PLY or OBJ by extension."""
        write_mesh(path, self.vertices, self.faces, normals=self.normals, comments=comments)


class TsdfGrid:
    """Dense, growable store of per-voxel point/normal sums.

    ``sdf`` and the means are derived on demand; a voxel exists once
    ``point_count > 0``.
    """

    _GROW = 16

    def __init__(self, l_vox: float = 0.5, trunc: float | None = None):
        if not l_vox > 0:
            raise ValueError("l_vox must be positive")
        self.l_vox = float(l_vox)
        self.trunc = default_trunc(self.l_vox) if trunc is None else float(trunc)
        if not self.trunc > 0:
            raise ValueError("truncation must be positive")
        self.lo = np.zeros(3, dtype=np.int64)
        self.sum_p = np.zeros((0, 0, 0, 3))
        self.sum_n = np.zeros((0, 0, 0, 3))
        self.count = np.zeros((0, 0, 0), dtype=np.int64)
        self.weight = np.zeros((0, 0, 0))

    @property
    def shape(self):
        return self.count.shape

    def __len__(self):
        return int(np.count_nonzero(self.count))

    def _ensure(self, kmin, kmax):
        kmin = np.asarray(kmin, dtype=np.int64)
        kmax = np.asarray(kmax, dtype=np.int64)
        if self.count.size == 0:
            lo, hi = kmin - self._GROW, kmax + self._GROW + 1
        else:
            hi_cur = self.lo + np.array(self.count.shape)
            if np.all(kmin >= self.lo) and np.all(kmax < hi_cur):
                return
            lo = np.where(kmin < self.lo, kmin - self._GROW, self.lo)
            hi = np.where(kmax >= hi_cur, kmax + self._GROW + 1, hi_cur)
        shape = tuple(int(x) for x in hi - lo)
        sum_p, sum_n = np.zeros(shape + (3,)), np.zeros(shape + (3,))
        count, weight = np.zeros(shape, dtype=np.int64), np.zeros(shape)
        if self.count.size:
            o = self.lo - lo
            sl = tuple(slice(int(o[a]), int(o[a]) + self.count.shape[a]) for a in range(3))
            sum_p[sl], sum_n[sl] = self.sum_p, self.sum_n
            count[sl], weight[sl] = self.count, self.weight
        self.lo, self.sum_p, self.sum_n, self.count, self.weight = lo, sum_p, sum_n, count, weight

    def state(self):
        """Raw storage, for exact comparisons."""
        return self.lo, self.sum_p, self.sum_n, self.count, self.weight

    def copy(self) -> "TsdfGrid":
        g = TsdfGrid(self.l_vox, self.trunc)
        g.lo, g.sum_p, g.sum_n, g.count, g.weight = (x.copy() for x in self.state())
        return g

    # derived quantities ----------------------------------------------------
    def _dense(self):
        """``(sdf, valid)`` over the whole block; ``sdf`` is NaN where invalid."""
        cnt = self.count
        norm = np.linalg.norm(self.sum_n, axis=-1)
        valid = (cnt > 0) & (norm > _NORMAL_EPS * np.maximum(cnt, 1))
        sdf = np.full(cnt.shape, np.nan)
        if valid.any():
            idx = np.nonzero(valid)
            centers = (np.column_stack(idx) + self.lo + 0.5) * self.l_vox
            p_bar = self.sum_p[idx] / cnt[idx][:, None]
            n_bar = self.sum_n[idx] / norm[idx][:, None]
            s = np.einsum("ij,ij->i", n_bar, centers - p_bar)
            sdf[idx] = np.clip(s, -self.trunc, self.trunc)
        return sdf, valid

    def to_arrays(self):
        """Voxels with points, lexicographic: ``keys, sdf, weight, count, mean_point, mean_normal``."""
        sdf, _ = self._dense()
        idx = np.nonzero(self.count)
        keys = np.column_stack(idx).astype(np.int64) + self.lo if len(idx[0]) else np.zeros((0, 3), np.int64)
        cnt = self.count[idx]
        mean_p = self.sum_p[idx] / cnt[:, None] if len(cnt) else np.zeros((0, 3))
        sn = self.sum_n[idx]
        nn = np.linalg.norm(sn, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean_n = np.where(nn > 0, sn / nn, 0.0)
        return keys, sdf[idx], self.weight[idx], cnt, mean_p, mean_n

    def get(self, key) -> dict | None:
        """Record for voxel ``key`` or ``None`` if no point reached it."""
        rel = np.asarray(key, dtype=np.int64) - self.lo
        if self.count.size == 0 or np.any(rel < 0) or np.any(rel >= np.array(self.count.shape)):
            return None
        i = tuple(int(x) for x in rel)
        c = int(self.count[i])
        if c == 0:
            return None
        sn = self.sum_n[i]
        nn = float(np.linalg.norm(sn))
        n_bar = sn / nn if nn > _NORMAL_EPS * c else np.zeros(3)
        p_bar = self.sum_p[i] / c
        centre = (np.asarray(key, dtype=np.float64) + 0.5) * self.l_vox
        sdf = float(np.clip(n_bar @ (centre - p_bar), -self.trunc, self.trunc)) if nn > _NORMAL_EPS * c \
            else math.nan
        return {"sdf": sdf, "weight": float(self.weight[i]), "point_count": c,
                "mean_point": p_bar, "mean_normal": n_bar}

    def dump_csv(self, path):
        """Rows ``i,j,k,sdf,weight`` in key order."""
        keys, sdf, w, *_ = self.to_arrays()
        with open(Path(path), "w") as fh:
            fh.write("i,j,k,sdf,weight\n")
            fh.writelines(f"{a},{b},{c},{s!r},{x!r}\n"
                          for (a, b, c), s, x in zip(keys.tolist(), sdf.tolist(), w.tolist()))


@nb.njit(cache=True)
def _splat(pts, nrm, l_vox, tau, lo, dims, sum_p, sum_n, count, weight):
    r = int(math.ceil(tau / l_vox))
    t2 = tau * tau
    for i in range(len(pts)):
        p = pts[i]
        b0 = int(math.floor(p[0] / l_vox))
        b1 = int(math.floor(p[1] / l_vox))
        b2 = int(math.floor(p[2] / l_vox))
        for a in range(-r, r + 1):
            for b in range(-r, r + 1):
                for c in range(-r, r + 1):
                    k0, k1, k2 = b0 + a, b1 + b, b2 + c
                    e0 = (k0 + 0.5) * l_vox - p[0]
                    e1 = (k1 + 0.5) * l_vox - p[1]
                    e2 = (k2 + 0.5) * l_vox - p[2]
                    if (a != 0 or b != 0 or c != 0) and e0 * e0 + e1 * e1 + e2 * e2 > t2:
                        continue
                    f = ((k0 - lo[0]) * dims[1] + (k1 - lo[1])) * dims[2] + (k2 - lo[2])
                    for j in range(3):
                        sum_p[f, j] += p[j]
                        sum_n[f, j] += nrm[i, j]
                    count[f] += 1
                    weight[f] += 1.0


def _frame_normals(normals, n_points):
    if isinstance(normals, FrameMesh):
        return normals.point_normals, normals.normal_valid
    if isinstance(normals, tuple):
        n, valid = normals
        return np.asarray(n, dtype=np.float64), np.asarray(valid, dtype=bool)
    n = np.asarray(normals, dtype=np.float64).reshape(n_points, 3)
    return n, np.linalg.norm(n, axis=1) > 0.5


def integrate(grid: TsdfGrid, frame: ScanFrame, normals, mask: DynamicMask, tau: float | None = None,
              *, radius: float | None = None) -> int:
    """Add ``frame``'s non-dynamic points with valid normals to ``grid``.

    Points labelled unobserved are included: no evidence marks them as
    moving, and surfaces at the edge of the field of view are only ever
    seen that way.

    ``normals`` is the frame's :class:`FrameMesh`, a ``(normals, valid)``
    pair, or an ``(N, 3)`` array with zero rows for missing normals; all in
    the sensor frame. ``tau`` is the splat radius (defaults to
    ``grid.trunc``); points farther than ``radius`` from the sensor are
    ignored. Returns the number of points integrated.
    """
    n_loc, valid = _frame_normals(normals, len(frame))
    if len(mask) != len(frame) or len(n_loc) != len(frame):
        raise ValueError("mask, normals and frame differ in length")
    tau = grid.trunc if tau is None else float(tau)
    use = (mask.labels != Label.DYNAMIC) & valid
    if radius is not None:
        use &= np.linalg.norm(frame.points, axis=1) <= radius
    if not use.any():
        return 0
    R = frame.pose.rotation
    pts = frame.world_points()[use]
    nrm = n_loc[use] @ R.T
    l = grid.l_vox
    r = math.ceil(tau / l)
    keys = np.floor(pts / l).astype(np.int64)
    grid._ensure(keys.min(axis=0) - r, keys.max(axis=0) + r)
    dims = np.array(grid.shape, dtype=np.int64)
    _splat(np.ascontiguousarray(pts), np.ascontiguousarray(nrm), l, tau, grid.lo, dims,
           grid.sum_p.reshape(-1, 3), grid.sum_n.reshape(-1, 3), grid.count.reshape(-1), grid.weight.reshape(-1))
    return int(use.sum())


def extract_mesh(grid: TsdfGrid) -> TriangleMesh:
    """Zero level set of ``grid`` over cells whose 8 corners all carry weight.

    Faces wind so their normals point toward positive distance (free
    space); triangles with area at most ``AREA_EPS`` are dropped.
    """
    if grid.count.size == 0 or len(grid) == 0:
        return TriangleMesh.empty()
    sdf, valid = grid._dense()
    valid &= grid.weight > 0
    if not valid.any():
        return TriangleMesh.empty()
    idx = np.nonzero(valid)
    a = np.array([x.min() for x in idx])
    b = np.array([x.max() for x in idx]) + 1
    sl = tuple(slice(int(a[i]), int(b[i])) for i in range(3))
    vol, ok = sdf[sl], valid[sl]
    if min(vol.shape) < 2:
        return TriangleMesh.empty()
    cell = ok[:-1, :-1, :-1] & ok[1:, :-1, :-1] & ok[:-1, 1:, :-1] & ok[:-1, :-1, 1:] \
        & ok[1:, 1:, :-1] & ok[1:, :-1, 1:] & ok[:-1, 1:, 1:] & ok[1:, 1:, 1:]
    if not cell.any():
        return TriangleMesh.empty()
    # skimage gates each cell on the mask value at its far corner
    gate = np.zeros(vol.shape, dtype=bool)
    gate[1:, 1:, 1:] = cell
    vol = np.where(ok, vol, grid.trunc)
    if not vol.min() <= 0.0 <= vol.max():
        return TriangleMesh.empty()
    try:
        verts, faces, _, _ = measure.marching_cubes(vol, 0.0, mask=gate, allow_degenerate=False)
    except RuntimeError:  # no zero crossing
        return TriangleMesh.empty()
    verts = (verts + a + grid.lo + 0.5) * grid.l_vox
    faces = faces.astype(np.int64)
    mesh = _clean(verts, faces)
    return mesh


def _clean(verts, faces) -> TriangleMesh:
    t = verts[faces]
    cr = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    area = 0.5 * np.linalg.norm(cr, axis=1)
    keep = area > AREA_EPS
    faces, cr = faces[keep], cr[keep]
    used = np.unique(faces)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts, faces = verts[used], remap[faces]
    vn = np.zeros_like(verts)
    for j in range(3):
        np.add.at(vn, faces[:, j], cr)  # area-weighted face normals
    vn /= np.maximum(np.linalg.norm(vn, axis=1, keepdims=True), 1e-300)
    return TriangleMesh(verts, faces, vn)


def grid_from_sdf(values, l_vox: float, lo=(0, 0, 0), trunc: float | None = None) -> TsdfGrid:
    """Grid whose voxels reproduce a sampled SDF exactly (for analytic tests).

    Each voxel gets one pseudo point on the plane through its centre's
    closest surface point, using the SDF gradient as normal. NaN marks an
    empty voxel.
    """
    values = np.asarray(values, dtype=np.float64)
    g = TsdfGrid(l_vox, trunc)
    g._ensure(np.asarray(lo), np.asarray(lo) + np.array(values.shape) - 1)
    o = np.asarray(lo) - g.lo
    sl = tuple(slice(int(o[i]), int(o[i]) + values.shape[i]) for i in range(3))
    grad = np.stack(np.gradient(np.nan_to_num(values), l_vox), axis=-1)
    gn = np.linalg.norm(grad, axis=-1, keepdims=True)
    grad = np.where(gn > 0, grad / np.maximum(gn, 1e-300), np.array([0.0, 0.0, 1.0]))
    idx = np.indices(values.shape).transpose(1, 2, 3, 0)
    centres = (idx + np.asarray(lo) + 0.5) * l_vox
    have = ~np.isnan(values)
    p = centres - np.nan_to_num(values)[..., None] * grad
    g.sum_p[sl] = np.where(have[..., None], p, 0.0)
    g.sum_n[sl] = np.where(have[..., None], grad, 0.0)
    g.count[sl] = have.astype(np.int64)
    g.weight[sl] = have.astype(np.float64)
    return g
