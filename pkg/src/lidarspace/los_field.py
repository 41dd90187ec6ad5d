"""Line-of-sight distance field over a world-aligned voxel grid.

For a voxel centre ``q`` seen from sensor position ``s``, the per-frame
value is the range to the first mesh hit along ``s -> q`` minus the range
to ``q``: positive in front of the surface, truncated at ``-l_vox/2``
behind it. Frames are fused by a running weighted average.

Voxel ``(i, j, k)`` covers ``[i, i+1) * l_vox`` per axis; its centre is
``(i + 1/2) * l_vox``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np

from .bvh import AngularIndex, BvhIndex
from .frame_mesh import FrameMesh
from .scan_model import ScanFrame

FUSION_MODES = ("running", "blend")

_PACK_OFF = 1 << 20
_PACK_BITS = 21


class Occupancy(enum.IntEnum):
    FREE = 0
    OCCUPIED = 1
    UNKNOWN = 2


class Label(enum.IntEnum):
    STATIC = 0
    DYNAMIC = 1
    UNOBSERVED = 2


@dataclass(frozen=True)
class FieldParams:
    """Voxel size, update radius and fusion weights.

    ``fusion="running"`` accumulates ``W`` and averages all samples
    (``w_prev`` unused); ``"blend"`` mixes old and new values with the fixed
    weights ``w_prev`` and ``w_new`` each frame.
    """

    l_vox: float = 0.5
    update_radius: float = 30.0
    w_prev: float = 1.0
    w_new: float = 1.0
    fusion: str = "running"

    def __post_init__(self):
        if not self.l_vox > 0:
            raise ValueError(f"l_vox must be positive, got {self.l_vox}")
        if not self.update_radius > self.l_vox:
            raise ValueError("update_radius must exceed l_vox")
        if not (self.w_prev > 0 and self.w_new > 0):
            raise ValueError("fusion weights must be positive")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")


def voxel_keys(points, l_vox: float) -> np.ndarray:
    """Integer voxel coordinates ``floor(p / l_vox)`` of world points."""
    return np.floor(np.asarray(points, dtype=np.float64).reshape(-1, 3) / l_vox).astype(np.int64)


def voxel_centers(keys, l_vox: float) -> np.ndarray:
    return (np.asarray(keys, dtype=np.float64).reshape(-1, 3) + 0.5) * l_vox


def pack_keys(keys) -> np.ndarray:
    """Order-preserving int64 code for voxel keys with ``|i| < 2**20``."""
    k = np.asarray(keys, dtype=np.int64).reshape(-1, 3) + _PACK_OFF
    if np.any(k < 0) or np.any(k >= 1 << _PACK_BITS):
        raise ValueError("voxel key outside the packable range")
    return (k[:, 0] << (2 * _PACK_BITS)) | (k[:, 1] << _PACK_BITS) | k[:, 2]


def los_distance(hit_range: float, voxel_range: float, l_vox: float) -> float | None:
    """Truncated line-of-sight distance; ``None`` when the ray missed."""
    if not math.isfinite(hit_range):
        return None
    f = hit_range - voxel_range
    return f if f >= 0 else max(f, -l_vox / 2)


@dataclass
class FrameField:
    """Per-frame LoS distances ``d`` at voxel ``keys`` (sorted by packed code)."""

    frame_id: int
    keys: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self._codes = pack_keys(self.keys)

    def __len__(self):
        return len(self.d)

    def lookup(self, keys) -> tuple[np.ndarray, np.ndarray]:
        """Values at ``keys``; returns ``(d, present)`` with NaN where absent."""
        codes = pack_keys(keys)
        pos = np.searchsorted(self._codes, codes)
        pos_c = np.minimum(pos, max(len(self._codes) - 1, 0))
        present = (pos < len(self._codes)) & (self._codes[pos_c] == codes) if len(self._codes) else \
            np.zeros(len(codes), dtype=bool)
        out = np.full(len(codes), np.nan)
        out[present] = self.d[pos_c[present]]
        return out, present


class LoSField:
    """Fused LoS distance ``D``, weight ``W`` and last update frame per voxel.

    Storage is a dense block that grows to cover every observed voxel;
    ``W == 0`` marks a voxel as never observed, which the interface reports
    as absent.
    """

    _GROW = 16

    def __init__(self, l_vox: float = 0.5):
        if not l_vox > 0:
            raise ValueError("l_vox must be positive")
        self.l_vox = float(l_vox)
        self.lo = np.zeros(3, dtype=np.int64)
        self.D = np.zeros((0, 0, 0))
        self.W = np.zeros((0, 0, 0))
        self.last = np.zeros((0, 0, 0), dtype=np.int64)

    # storage ---------------------------------------------------------------
    @property
    def shape(self):
        return self.D.shape

    def _ensure(self, kmin, kmax):
        kmin = np.asarray(kmin, dtype=np.int64)
        kmax = np.asarray(kmax, dtype=np.int64)
        if self.D.size == 0:
            lo, hi = kmin - self._GROW, kmax + self._GROW + 1
        else:
            hi_cur = self.lo + np.array(self.D.shape)
            if np.all(kmin >= self.lo) and np.all(kmax < hi_cur):
                return
            lo = np.where(kmin < self.lo, kmin - self._GROW, self.lo)
            hi = np.where(kmax >= hi_cur, kmax + self._GROW + 1, hi_cur)
        shape = tuple(int(x) for x in hi - lo)
        D = np.zeros(shape)
        W = np.zeros(shape)
        last = np.zeros(shape, dtype=np.int64)
        if self.D.size:
            o = self.lo - lo
            sl = tuple(slice(int(o[a]), int(o[a]) + self.D.shape[a]) for a in range(3))
            D[sl], W[sl], last[sl] = self.D, self.W, self.last
        self.lo, self.D, self.W, self.last = lo, D, W, last

    def _index(self, keys):
        """Flat dense indices of ``keys`` and a mask of those inside storage."""
        rel = np.asarray(keys, dtype=np.int64).reshape(-1, 3) - self.lo
        inside = np.all((rel >= 0) & (rel < np.array(self.D.shape)), axis=1) if self.D.size else \
            np.zeros(len(rel), dtype=bool)
        flat = np.zeros(len(rel), dtype=np.int64)
        if inside.any():
            flat[inside] = np.ravel_multi_index(tuple(rel[inside].T), self.D.shape)
        return flat, inside

    # queries ---------------------------------------------------------------
    def __len__(self):
        return int(np.count_nonzero(self.W))

    def __contains__(self, key):
        return bool(self.lookup(np.asarray(key).reshape(1, 3))[2][0])

    def lookup(self, keys):
        """``(D, W, present)`` at voxel ``keys``; ``D`` is NaN where absent."""
        flat, inside = self._index(keys)
        W = np.zeros(len(flat))
        D = np.full(len(flat), np.nan)
        W[inside] = self.W.ravel()[flat[inside]]
        present = W > 0
        D[present] = self.D.ravel()[flat[present]]
        return D, W, present

    def get(self, key):
        """``(D, W, last_frame)`` for one voxel, or ``None`` if unobserved."""
        key = np.asarray(key, dtype=np.int64).reshape(1, 3)
        flat, inside = self._index(key)
        if not inside[0] or self.W.ravel()[flat[0]] == 0:
            return None
        f = flat[0]
        return float(self.D.ravel()[f]), float(self.W.ravel()[f]), int(self.last.ravel()[f])

    def to_arrays(self):
        """Observed voxels in ``(i, j, k)`` lexicographic order: ``keys, D, W, last``."""
        idx = np.nonzero(self.W)
        keys = np.column_stack(idx).astype(np.int64) + self.lo if len(idx[0]) else np.zeros((0, 3), np.int64)
        return keys, self.D[idx], self.W[idx], self.last[idx]

    @classmethod
    def from_arrays(cls, l_vox, keys, D, W, last) -> "LoSField":
        f = cls(l_vox)
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
        W = np.asarray(W, dtype=np.float64)
        if np.any(W <= 0):
            raise ValueError("stored voxels must have positive weight")
        if len(keys):
            f._ensure(keys.min(axis=0), keys.max(axis=0))
            flat, _ = f._index(keys)
            f.D.ravel()[flat] = D
            f.W.ravel()[flat] = W
            f.last.ravel()[flat] = last
        return f

    def copy(self) -> "LoSField":
        f = LoSField(self.l_vox)
        f.lo, f.D, f.W, f.last = self.lo.copy(), self.D.copy(), self.W.copy(), self.last.copy()
        return f

    def min_distance(self) -> float:
        """Smallest stored ``D`` (``inf`` for an empty field)."""
        w = self.W > 0
        return float(self.D[w].min()) if w.any() else math.inf

    def same_as(self, other: "LoSField") -> bool:
        a, b = self.to_arrays(), other.to_arrays()
        return self.l_vox == other.l_vox and all(np.array_equal(x, y) for x, y in zip(a, b))

    # fusion ----------------------------------------------------------------
    def fuse(self, frame_field: FrameField, params: FieldParams):
        """Fold one frame's observations into the field."""
        if len(frame_field) == 0:
            return
        keys = frame_field.keys
        self._ensure(keys.min(axis=0), keys.max(axis=0))
        flat, _ = self._index(keys)
        D, W, last = self.D.ravel(), self.W.ravel(), self.last.ravel()
        d = frame_field.d
        w_old = W[flat]
        D_old = D[flat]
        fresh = w_old == 0
        if params.fusion == "running":
            # incremental mean: repeated identical samples leave D unchanged
            D_new = D_old + params.w_new * (d - D_old) / (w_old + params.w_new)
        else:
            D_new = (params.w_prev * D_old + params.w_new * d) / (params.w_prev + params.w_new)
        D[flat] = np.where(fresh, d, D_new)
        W[flat] = w_old + params.w_new
        last[flat] = frame_field.frame_id


@nb.njit(cache=True, nogil=True)
def _ball_candidates(s, R, l_vox, radius, lo, dims, sector_ok, sector_width):
    """Voxels of the update ball inside covered sectors: flat block indices
    and sensor-local directions (``R^T (q - s)``) in C order."""
    n1, n2, n3 = dims[0], dims[1], dims[2]
    cap = n1 * n2 * n3
    flat = np.empty(cap, np.int64)
    dirs = np.empty((cap, 3))
    r2 = radius * radius
    nsec = sector_ok.shape[0]
    m = 0
    for a in range(n1):
        cx = (lo[0] + a + 0.5) * l_vox - s[0]
        for b in range(n2):
            cy = (lo[1] + b + 0.5) * l_vox - s[1]
            for c in range(n3):
                cz = (lo[2] + c + 0.5) * l_vox - s[2]
                dist2 = cx * cx + cy * cy + cz * cz
                if dist2 > r2 or dist2 == 0.0:
                    continue
                lx = R[0, 0] * cx + R[1, 0] * cy + R[2, 0] * cz
                ly = R[0, 1] * cx + R[1, 1] * cy + R[2, 1] * cz
                lz = R[0, 2] * cx + R[1, 2] * cy + R[2, 2] * cz
                az = math.atan2(ly, lx)
                if az < 0.0:
                    az += 2.0 * math.pi
                sec = int(az / sector_width)
                if sec >= nsec:
                    sec = nsec - 1
                if not sector_ok[sec]:
                    continue
                flat[m] = (a * n2 + b) * n3 + c
                dirs[m, 0] = lx
                dirs[m, 1] = ly
                dirs[m, 2] = lz
                m += 1
    return flat[:m], dirs[:m]


CASTERS = ("angular", "bvh")


def mesh_caster(mesh: FrameMesh, kind: str = "angular"):
    """Ray-casting index over the mesh's surface (non-viewpoint) faces."""
    sel = np.flatnonzero(~mesh.vp_incident)
    if kind == "angular":
        return AngularIndex.build(mesh.points, mesh.faces[sel], face_ids=sel)
    if kind == "bvh":
        return BvhIndex.build(mesh.points, mesh.faces[sel], face_ids=sel)
    raise ValueError(f"unknown caster {kind!r}; expected one of {CASTERS}")


def mesh_bvh(mesh: FrameMesh) -> BvhIndex:
    return mesh_caster(mesh, "bvh")


def cast_from_sensor(caster, dirs):
    """Nearest hits of rays from the sensor origin along ``dirs``."""
    if isinstance(caster, AngularIndex):
        return caster.intersect(dirs)
    return caster.intersect(np.zeros(3), dirs)


def frame_los_field(frame: ScanFrame, mesh: FrameMesh, params: FieldParams = FieldParams(),
                    caster="angular") -> FrameField:
    """Per-frame field ``d^t`` over voxel centres in the update ball.

    One ray per voxel centre is cast against the mesh's surface faces. Only
    voxels whose azimuth falls in a sector that produced surface faces are
    considered; rays that miss leave the voxel unobserved. ``caster`` is
    ``"angular"``, ``"bvh"`` or a prebuilt index; all give identical output.
    """
    if mesh.frame_id != frame.frame_id:
        raise ValueError(f"mesh of frame {mesh.frame_id} used with frame {frame.frame_id}")
    if isinstance(caster, str):
        caster = mesh_caster(mesh, caster)
    s = np.asarray(frame.origin, dtype=np.float64)
    l = params.l_vox
    lo = np.floor((s - params.update_radius) / l).astype(np.int64)
    hi = np.floor((s + params.update_radius) / l).astype(np.int64)
    dims = hi - lo + 1
    flat, dirs = _ball_candidates(s, np.ascontiguousarray(frame.pose.rotation), l, params.update_radius, lo,
                                  dims, mesh.sectors_with_faces(), 2 * math.pi / mesh.n_sectors)
    t, f = cast_from_sensor(caster, dirs)
    hit = f >= 0
    rng = np.sqrt(np.einsum("ij,ij->i", dirs[hit], dirs[hit]))
    d = np.maximum(rng * t[hit] - rng, -0.5 * l)
    keys = np.column_stack(np.unravel_index(flat[hit], tuple(dims))).astype(np.int64) + lo
    return FrameField(frame.frame_id, keys, d)


def update_frame(field: LoSField, frame: ScanFrame, mesh: FrameMesh,
                 params: FieldParams = FieldParams()) -> FrameField:
    """Compute ``d^t`` for ``frame`` and fuse it into ``field``; returns ``d^t``."""
    ff = frame_los_field(frame, mesh, params)
    field.fuse(ff, params)
    return ff


@dataclass
class DynamicMask:
    frame_id: int
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    @property
    def dynamic(self) -> np.ndarray:
        return self.labels == Label.DYNAMIC

    @property
    def static(self) -> np.ndarray:
        return self.labels == Label.STATIC

    def counts(self) -> dict:
        return {lab.name.lower(): int(np.count_nonzero(self.labels == lab)) for lab in Label}


def detect_dynamic(field: LoSField, frame: ScanFrame, d_t: FrameField,
                   params: FieldParams = FieldParams()) -> DynamicMask:
    """Label points entering voxels the field had established as free.

    ``field`` must not yet contain frame ``t``. A point is dynamic when its
    voxel had ``D > l_vox/2`` and this frame measures ``d <= l_vox/2`` there;
    unobserved when the field has never seen its voxel.
    """
    half = params.l_vox / 2
    keys = voxel_keys(frame.world_points(), params.l_vox)
    D, _, present = field.lookup(keys)
    d, _ = d_t.lookup(keys)
    labels = np.full(len(keys), Label.STATIC, dtype=np.uint8)
    labels[~present] = Label.UNOBSERVED
    with np.errstate(invalid="ignore"):
        labels[present & (D > half) & (d <= half)] = Label.DYNAMIC
    return DynamicMask(frame.frame_id, labels)


def is_free(field: LoSField, q, l_vox: float | None = None) -> Occupancy:
    """Occupancy of the voxel containing world point ``q``."""
    l = field.l_vox if l_vox is None else l_vox
    D, _, present = field.lookup(voxel_keys(q, field.l_vox))
    if not present[0]:
        return Occupancy.UNKNOWN
    return Occupancy.OCCUPIED if D[0] <= l / 2 else Occupancy.FREE


def classify(field: LoSField, points) -> np.ndarray:
    """Vectorised :func:`is_free` returning :class:`Occupancy` codes."""
    D, _, present = field.lookup(voxel_keys(points, field.l_vox))
    out = np.full(len(D), Occupancy.UNKNOWN, dtype=np.uint8)
    out[present & (D <= field.l_vox / 2)] = Occupancy.OCCUPIED
    out[present & (D > field.l_vox / 2)] = Occupancy.FREE
    return out


_CSV_HEADER = "i,j,k,D,W,last_frame"


def export_field(field: LoSField, path, mode: str = "csv", *, z: float | None = None):
    """Write the field as csv rows or as one horizontal slice.

    ``mode="slice"`` writes the layer containing height ``z`` as a dense
    grid of ``D`` (rows along ``j``, columns along ``i``), ``nan`` marking
    unobserved voxels; a comment line gives ``k`` and the grid origin.
    """
    path = Path(path)
    keys, D, W, last = field.to_arrays()
    if len(D) == 0:
        raise ValueError("field is empty")
    if mode == "csv":
        with open(path, "w") as fh:
            fh.write(_CSV_HEADER + "\n")
            fh.writelines(f"{a},{b},{c},{d!r},{w!r},{t}\n"
                          for (a, b, c), d, w, t in zip(keys.tolist(), D.tolist(), W.tolist(), last.tolist()))
    elif mode in ("slice", "slice_png_like_grid"):
        grid, k, i0, j0 = field_slice(field, z)
        with open(path, "w") as fh:
            fh.write(f"# k={k} i0={i0} j0={j0} l_vox={field.l_vox!r}\n")
            for row in grid:
                fh.write(",".join("nan" if math.isnan(v) else repr(v) for v in row.tolist()) + "\n")
    else:
        raise ValueError(f"unknown export mode {mode!r}")


def field_slice(field: LoSField, z: float | None = None):
    """Dense ``D`` layer at height ``z``: ``(grid[j, i], k, i0, j0)``, NaN where unobserved.

    ``z`` defaults to the middle of the stored block.
    """
    if field.D.size == 0:
        raise ValueError("field is empty")
    if z is None:
        k = int(field.lo[2] + field.D.shape[2] // 2)
    else:
        k = int(math.floor(z / field.l_vox))
    c = k - int(field.lo[2])
    if not 0 <= c < field.D.shape[2]:
        grid = np.full((field.D.shape[1], field.D.shape[0]), np.nan)
    else:
        layer = np.where(field.W[:, :, c] > 0, field.D[:, :, c], np.nan)
        grid = layer.T.copy()
    return grid, k, int(field.lo[0]), int(field.lo[1])


def read_field_csv(path, l_vox: float) -> LoSField:
    """Load a csv written by :func:`export_field`."""
    from .fileio import ParseError

    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != _CSV_HEADER:
        raise ParseError(path, f"expected header {_CSV_HEADER!r}", line=1)
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 6:
            raise ParseError(path, f"expected 6 columns, got {len(parts)}", line=lineno)
        try:
            rows.append((int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4]),
                         int(parts[5])))
        except ValueError:
            raise ParseError(path, f"bad row {ln!r}", line=lineno) from None
    if not rows:
        return LoSField(l_vox)
    cols = list(zip(*rows))
    keys = np.column_stack(cols[:3]).astype(np.int64)
    return LoSField.from_arrays(l_vox, keys, np.array(cols[3]), np.array(cols[4]), np.array(cols[5], np.int64))
