"""Bounding-volume hierarchy for nearest ray/triangle hits.

Both the tree query and the brute-force reference use the same
Moller-Trumbore test and the same tie rule (smaller ``t``, then smaller
triangle id), so they agree exactly rather than approximately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

LEAF_SIZE = 4
T_MIN = 1e-9
_STACK = 64


@nb.njit(cache=True, nogil=True, inline="always")
def _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, f):
    """Ray parameter of the hit with triangle ``f`` or ``inf``."""
    px = dy * e2[f, 2] - dz * e2[f, 1]
    py = dz * e2[f, 0] - dx * e2[f, 2]
    pz = dx * e2[f, 1] - dy * e2[f, 0]
    det = e1[f, 0] * px + e1[f, 1] * py + e1[f, 2] * pz
    if det == 0.0:
        return np.inf
    inv = 1.0 / det
    tx = ox - v0[f, 0]
    ty = oy - v0[f, 1]
    tz = oz - v0[f, 2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf
    qx = ty * e1[f, 2] - tz * e1[f, 1]
    qy = tz * e1[f, 0] - tx * e1[f, 2]
    qz = tx * e1[f, 1] - ty * e1[f, 0]
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf
    t = (e2[f, 0] * qx + e2[f, 1] * qy + e2[f, 2] * qz) * inv
    if t <= T_MIN:
        return np.inf
    return t


@nb.njit(cache=True, nogil=True)
def _build(cent, lo, hi, leaf_size):
    n = cent.shape[0]
    order = np.arange(n)
    cap = max(1, 2 * n)
    bmin = np.empty((cap, 3))
    bmax = np.empty((cap, 3))
    left = np.full(cap, -1, np.int64)
    start = np.zeros(cap, np.int64)
    count = np.zeros(cap, np.int64)
    # work stack of (node, begin, end)
    stack = np.empty((cap, 3), np.int64)
    sp = 0
    nodes = 1
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp, 0]
        b = stack[sp, 1]
        e = stack[sp, 2]
        for k in range(3):
            mn = np.inf
            mx = -np.inf
            for i in range(b, e):
                f = order[i]
                if lo[f, k] < mn:
                    mn = lo[f, k]
                if hi[f, k] > mx:
                    mx = hi[f, k]
            bmin[node, k] = mn
            bmax[node, k] = mx
        if e - b <= leaf_size:
            start[node] = b
            count[node] = e - b
            continue
        # split on the longest centroid axis at the median
        axis = 0
        ext = -1.0
        for k in range(3):
            mn = np.inf
            mx = -np.inf
            for i in range(b, e):
                c = cent[order[i], k]
                mn = min(mn, c)
                mx = max(mx, c)
            if mx - mn > ext:
                ext = mx - mn
                axis = k
        seg = order[b:e]
        keys = cent[seg, axis]
        idx = np.argsort(keys, kind="mergesort")
        order[b:e] = seg[idx]
        mid = (b + e) // 2
        left[node] = nodes
        stack[sp, 0] = nodes
        stack[sp, 1] = b
        stack[sp, 2] = mid
        stack[sp + 1, 0] = nodes + 1
        stack[sp + 1, 1] = mid
        stack[sp + 1, 2] = e
        sp += 2
        nodes += 2
    return bmin[:nodes].copy(), bmax[:nodes].copy(), left[:nodes].copy(), start[:nodes].copy(), \
        count[:nodes].copy(), order


@nb.njit(cache=True, nogil=True, inline="always")
def _box_entry(ox, oy, oz, ix, iy, iz, bmin, bmax, node):
    """Entry parameter of the ray into the node box, or ``inf`` on a miss."""
    t0 = 0.0
    t1 = np.inf
    for k in range(3):
        if k == 0:
            o, inv = ox, ix
        elif k == 1:
            o, inv = oy, iy
        else:
            o, inv = oz, iz
        a = (bmin[node, k] - o) * inv
        b = (bmax[node, k] - o) * inv
        if a != a or b != b:  # 0 * inf: origin on the slab plane, parallel ray
            if o < bmin[node, k] or o > bmax[node, k]:
                return np.inf
            continue
        if a > b:
            a, b = b, a
        if a > t0:
            t0 = a
        if b < t1:
            t1 = b
        if t0 > t1:
            return np.inf
    return t0


@nb.njit(cache=True, nogil=True)
def _query(o, d, bmin, bmax, left, start, count, order, v0, e1, e2):
    ox, oy, oz = o[0], o[1], o[2]
    dx, dy, dz = d[0], d[1], d[2]
    ix = 1.0 / dx if dx != 0.0 else np.inf
    iy = 1.0 / dy if dy != 0.0 else np.inf
    iz = 1.0 / dz if dz != 0.0 else np.inf
    best = np.inf
    best_f = -1
    if bmin.shape[0] == 0:
        return best, best_f
    stack = np.empty(_STACK, np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        te = _box_entry(ox, oy, oz, ix, iy, iz, bmin, bmax, node)
        if te > best or te == np.inf:
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                f = order[i]
                t = _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, f)
                if t < best or (t == best and t < np.inf and f < best_f):
                    best = t
                    best_f = f
            continue
        l = left[node]
        r = l + 1
        tl = _box_entry(ox, oy, oz, ix, iy, iz, bmin, bmax, l)
        tr = _box_entry(ox, oy, oz, ix, iy, iz, bmin, bmax, r)
        # push the farther child first so the nearer one is popped next
        if tl <= tr:
            if tr <= best and tr < np.inf:
                stack[sp] = r
                sp += 1
            if tl <= best and tl < np.inf:
                stack[sp] = l
                sp += 1
        else:
            if tl <= best and tl < np.inf:
                stack[sp] = l
                sp += 1
            if tr <= best and tr < np.inf:
                stack[sp] = r
                sp += 1
    return best, best_f


@nb.njit(cache=True, nogil=True, parallel=True)
def _query_many(origins, dirs, bmin, bmax, left, start, count, order, v0, e1, e2):
    n = dirs.shape[0]
    t = np.empty(n)
    f = np.empty(n, np.int64)
    for i in nb.prange(n):
        t[i], f[i] = _query(origins[i], dirs[i], bmin, bmax, left, start, count, order, v0, e1, e2)
    return t, f


@nb.njit(cache=True, nogil=True)
def _brute_many(origins, dirs, v0, e1, e2):
    n = dirs.shape[0]
    t_out = np.full(n, np.inf)
    f_out = np.full(n, -1, np.int64)
    for i in range(n):
        o = origins[i]
        d = dirs[i]
        for f in range(v0.shape[0]):
            t = _tri_hit(o[0], o[1], o[2], d[0], d[1], d[2], v0, e1, e2, f)
            if t < t_out[i]:
                t_out[i] = t
                f_out[i] = f
    return t_out, f_out


def _triangle_arrays(vertices, faces):
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    return np.ascontiguousarray(a), np.ascontiguousarray(b - a), np.ascontiguousarray(c - a), a, b, c


@dataclass(frozen=True)
class BvhIndex:
    """AABB tree over triangles; ``face_ids`` maps local triangle ids back."""

    bmin: np.ndarray
    bmax: np.ndarray
    left: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    face_ids: np.ndarray

    @classmethod
    def build(cls, vertices, faces, face_ids=None, leaf_size: int = LEAF_SIZE) -> "BvhIndex":
        v0, e1, e2, a, b, c = _triangle_arrays(vertices, faces)
        n = len(v0)
        ids = np.arange(n) if face_ids is None else np.asarray(face_ids, dtype=np.int64)
        if n == 0:
            z = np.zeros((0, 3))
            zi = np.zeros(0, np.int64)
            return cls(z, z, zi, zi, zi, zi, v0, e1, e2, ids)
        lo = np.minimum(np.minimum(a, b), c)
        hi = np.maximum(np.maximum(a, b), c)
        # pad so that rounding in the slab test never rejects a box whose
        # triangle the exact test would hit
        pad = 1e-9 * (1.0 + np.abs(lo).max() + np.abs(hi).max())
        lo, hi = lo - pad, hi + pad
        cent = (a + b + c) / 3.0
        return cls(*_build(cent, lo, hi, leaf_size), v0, e1, e2, ids)

    @property
    def n_faces(self) -> int:
        return len(self.v0)

    def intersect(self, origins, dirs):
        """Nearest hit per ray: ``(t, face_id)``; misses give ``(inf, -1)``.

        ``t`` is in units of the direction vector's length.
        """
        origins, dirs = _ray_arrays(origins, dirs)
        t, f = _query_many(origins, dirs, self.bmin, self.bmax, self.left, self.start, self.count,
                           self.order, self.v0, self.e1, self.e2)
        return t, _map_ids(self.face_ids, f)


def _map_ids(ids, f):
    """Local triangle hits to caller face ids; ``-1`` stays a miss."""
    if len(ids) == 0:
        return np.full(len(f), -1, dtype=np.int64)
    return np.where(f >= 0, ids[np.maximum(f, 0)], -1)


def _ray_arrays(origins, dirs):
    dirs = np.ascontiguousarray(np.asarray(dirs, dtype=np.float64).reshape(-1, 3))
    origins = np.asarray(origins, dtype=np.float64)
    if origins.ndim == 1:
        origins = np.broadcast_to(origins, dirs.shape)
    return np.ascontiguousarray(origins), dirs


def brute_force_intersect(vertices, faces, origins, dirs, face_ids=None):
    """Reference nearest hit testing every triangle; same output as :meth:`BvhIndex.intersect`."""
    v0, e1, e2, *_ = _triangle_arrays(vertices, faces)
    origins, dirs = _ray_arrays(origins, dirs)
    t, f = _brute_many(origins, dirs, v0, e1, e2)
    ids = np.arange(len(v0)) if face_ids is None else np.asarray(face_ids, dtype=np.int64)
    return t, _map_ids(ids, f)


# --------------------------------------------------------------------------
# Sensor-centred angular bins: for rays that all start at the origin.
#
# A triangle can only be hit by directions inside the cone spanned by its
# vertices. For a cone whose azimuth span is at most pi/2 that set lies in
# the azimuth wedge of the vertices, and its tan(elevation) lies within the
# vertex extremes widened by 1/cos(span/2) (the horizontal component of a
# convex combination shrinks by at most that factor). Binning each triangle
# over this footprint is conservative, so testing only the ray's own bin
# finds exactly the brute-force nearest hit. Triangles with wide or polar
# footprints go to a short list that every ray tests.

_AZ_MAX_SPAN = math.pi / 2
_MAX_CELLS = 4096
_PAD = 1e-9


@nb.njit(cache=True, nogil=True)
def _footprints(v0, e1, e2, n_az, n_el):
    n = v0.shape[0]
    az_lo = np.empty(n, np.int64)
    az_n = np.empty(n, np.int64)
    el_lo = np.empty(n, np.int64)
    el_hi = np.empty(n, np.int64)
    wide = np.zeros(n, np.bool_)
    da = 2.0 * math.pi / n_az
    de = math.pi / n_el
    for f in range(n):
        az0 = 0.0
        lo = 0.0
        hi = 0.0
        tmin = np.inf
        tmax = -np.inf
        for j in range(3):
            x = v0[f, 0]
            y = v0[f, 1]
            z = v0[f, 2]
            if j == 1:
                x += e1[f, 0]
                y += e1[f, 1]
                z += e1[f, 2]
            elif j == 2:
                x += e2[f, 0]
                y += e2[f, 1]
                z += e2[f, 2]
            rho = math.sqrt(x * x + y * y)
            if rho == 0.0:
                wide[f] = True
                break
            a = math.atan2(y, x)
            if j == 0:
                az0 = a
            else:
                d = a - az0
                if d > math.pi:
                    d -= 2.0 * math.pi
                elif d < -math.pi:
                    d += 2.0 * math.pi
                lo = min(lo, d)
                hi = max(hi, d)
            t = z / rho
            tmin = min(tmin, t)
            tmax = max(tmax, t)
        if wide[f] or hi - lo > _AZ_MAX_SPAN:
            wide[f] = True
            continue
        c = math.cos(0.5 * (hi - lo))
        tmax = max(tmax, tmax / c)
        tmin = min(tmin, tmin / c)
        tmax += _PAD * (1.0 + abs(tmax))
        tmin -= _PAD * (1.0 + abs(tmin))
        a_lo = az0 + lo - _PAD
        a_hi = az0 + hi + _PAD
        i_lo = int(math.floor((a_lo + math.pi) / da))
        i_hi = int(math.floor((a_hi + math.pi) / da))
        k_lo = max(0, int(math.floor((math.atan(tmin) + 0.5 * math.pi) / de)))
        k_hi = min(n_el - 1, int(math.floor((math.atan(tmax) + 0.5 * math.pi) / de)))
        if (i_hi - i_lo + 1) * (k_hi - k_lo + 1) > _MAX_CELLS:
            wide[f] = True
            continue
        az_lo[f] = i_lo
        az_n[f] = i_hi - i_lo + 1
        el_lo[f] = k_lo
        el_hi[f] = k_hi
    return az_lo, az_n, el_lo, el_hi, wide


@nb.njit(cache=True, nogil=True)
def _bin_triangles(az_lo, az_n, el_lo, el_hi, wide, n_az, n_el):
    counts = np.zeros(n_az * n_el + 1, np.int64)
    for f in range(az_lo.shape[0]):
        if wide[f]:
            continue
        for i in range(az_lo[f], az_lo[f] + az_n[f]):
            ii = i % n_az
            for k in range(el_lo[f], el_hi[f] + 1):
                counts[ii * n_el + k + 1] += 1
    for c in range(1, counts.shape[0]):
        counts[c] += counts[c - 1]
    fill = counts[:-1].copy()
    items = np.empty(counts[-1], np.int64)
    for f in range(az_lo.shape[0]):
        if wide[f]:
            continue
        for i in range(az_lo[f], az_lo[f] + az_n[f]):
            ii = i % n_az
            for k in range(el_lo[f], el_hi[f] + 1):
                c = ii * n_el + k
                items[fill[c]] = f
                fill[c] += 1
    return counts, items


@nb.njit(cache=True, nogil=True, inline="always")
def _angular_query(dx, dy, dz, offsets, items, wide_ids, n_az, n_el, v0, e1, e2):
    best = np.inf
    best_f = -1
    rho = math.sqrt(dx * dx + dy * dy)
    if rho == 0.0:
        # straight up or down: no bin is guaranteed, test everything
        for f in range(v0.shape[0]):
            t = _tri_hit(0.0, 0.0, 0.0, dx, dy, dz, v0, e1, e2, f)
            if t < best:
                best = t
                best_f = f
        return best, best_f
    da = 2.0 * math.pi / n_az
    de = math.pi / n_el
    i = int(math.floor((math.atan2(dy, dx) + math.pi) / da)) % n_az
    k = min(n_el - 1, max(0, int(math.floor((math.atan(dz / rho) + 0.5 * math.pi) / de))))
    c = i * n_el + k
    for m in range(offsets[c], offsets[c + 1]):
        f = items[m]
        t = _tri_hit(0.0, 0.0, 0.0, dx, dy, dz, v0, e1, e2, f)
        if t < best or (t == best and t < np.inf and f < best_f):
            best = t
            best_f = f
    for m in range(wide_ids.shape[0]):
        f = wide_ids[m]
        t = _tri_hit(0.0, 0.0, 0.0, dx, dy, dz, v0, e1, e2, f)
        if t < best or (t == best and t < np.inf and f < best_f):
            best = t
            best_f = f
    return best, best_f


@nb.njit(cache=True, nogil=True, parallel=True)
def _angular_many(dirs, offsets, items, wide_ids, n_az, n_el, v0, e1, e2):
    n = dirs.shape[0]
    t = np.empty(n)
    f = np.empty(n, np.int64)
    for r in nb.prange(n):
        t[r], f[r] = _angular_query(dirs[r, 0], dirs[r, 1], dirs[r, 2], offsets, items, wide_ids, n_az, n_el,
                                    v0, e1, e2)
    return t, f


@dataclass(frozen=True)
class AngularIndex:
    """Azimuth/elevation bins of triangles as seen from the origin.

    Answers the same nearest-hit queries as :class:`BvhIndex`, restricted to
    rays starting at the origin, typically several times faster.
    """

    offsets: np.ndarray
    items: np.ndarray
    wide_ids: np.ndarray
    n_az: int
    n_el: int
    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    face_ids: np.ndarray

    @classmethod
    def build(cls, vertices, faces, face_ids=None, n_az: int = 720, n_el: int = 360) -> "AngularIndex":
        v0, e1, e2, *_ = _triangle_arrays(vertices, faces)
        ids = np.arange(len(v0)) if face_ids is None else np.asarray(face_ids, dtype=np.int64)
        fp = _footprints(v0, e1, e2, n_az, n_el)
        offsets, items = _bin_triangles(*fp, n_az, n_el)
        return cls(offsets, items, np.flatnonzero(fp[4]).astype(np.int64), n_az, n_el, v0, e1, e2, ids)

    @property
    def n_faces(self) -> int:
        return len(self.v0)

    def intersect(self, dirs):
        """Nearest hit of rays from the origin along ``dirs``: ``(t, face_id)``."""
        _, dirs = _ray_arrays(np.zeros(3), dirs)
        t, f = _angular_many(dirs, self.offsets, self.items, self.wide_ids, self.n_az, self.n_el,
                             self.v0, self.e1, self.e2)
        return t, _map_ids(self.face_ids, f)
