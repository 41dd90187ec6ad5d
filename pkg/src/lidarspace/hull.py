"""3D convex hull by quickhull, plus a brute-force oracle for testing.

The kernel works with a thick-plane tolerance ``eps``: a point is outside a
face only when its signed distance exceeds ``eps``. No exact arithmetic is
used; inputs are noisy sensor data.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from numba import njit

_STAGES = {
    1: "initial simplex: all points coincident",
    2: "initial simplex: all points collinear",
    3: "initial simplex: all points coplanar",
    5: "facet: zero-area face created",
}


class HullDegeneracyError(ValueError):
    """The input is degenerate for a 3D hull; ``stage`` names where it failed."""

    def __init__(self, stage: str, detail: str = ""):
        self.stage = stage
        super().__init__(f"degenerate hull input ({stage}){': ' + detail if detail else ''}")


@dataclass(frozen=True)
class HullMesh:
    """Triangulated hull; indices refer to the input point array.

    Faces are wound counter-clockwise seen from outside, so
    ``cross(b - a, c - a)`` points along ``face_normals``.
    """

    vertex_indices: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray


def default_epsilon(points) -> float:
    """Plane tolerance scaled to the input: ``1e-7`` times the bbox diagonal."""
    points = np.asarray(points, dtype=np.float64)
    return 1e-7 * float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))


@njit(cache=True, nogil=True)
def _set_plane(pts, fv, fn, fo, f):
    a, b, c = fv[f, 0], fv[f, 1], fv[f, 2]
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
    if ln == 0.0:
        return False
    nx /= ln
    ny /= ln
    nz /= ln
    fn[f, 0] = nx
    fn[f, 1] = ny
    fn[f, 2] = nz
    # offset through the centroid is better conditioned than through one vertex
    cx = (pts[a, 0] + pts[b, 0] + pts[c, 0]) / 3.0
    cy = (pts[a, 1] + pts[b, 1] + pts[c, 1]) / 3.0
    cz = (pts[a, 2] + pts[b, 2] + pts[c, 2]) / 3.0
    fo[f] = nx * cx + ny * cy + nz * cz
    return True


@njit(cache=True, nogil=True)
def _dist(pts, fn, fo, f, p):
    return fn[f, 0] * pts[p, 0] + fn[f, 1] * pts[p, 1] + fn[f, 2] * pts[p, 2] - fo[f]


@njit(cache=True, nogil=True)
def _grow_faces(fv, fn, fo, fnb, alive, head, far_pt, far_d, mark):
    cap = fv.shape[0] * 2
    fv2 = np.empty((cap, 3), np.int64)
    fn2 = np.empty((cap, 3), np.float64)
    fo2 = np.empty(cap, np.float64)
    fnb2 = np.empty((cap, 3), np.int64)
    alive2 = np.zeros(cap, np.bool_)
    head2 = np.full(cap, -1, np.int64)
    far_pt2 = np.full(cap, -1, np.int64)
    far_d2 = np.zeros(cap, np.float64)
    mark2 = np.zeros(cap, np.int64)
    m = fv.shape[0]
    fv2[:m] = fv
    fn2[:m] = fn
    fo2[:m] = fo
    fnb2[:m] = fnb
    alive2[:m] = alive
    head2[:m] = head
    far_pt2[:m] = far_pt
    far_d2[:m] = far_d
    mark2[:m] = mark
    return fv2, fn2, fo2, fnb2, alive2, head2, far_pt2, far_d2, mark2


@njit(cache=True, nogil=True)
def _add_outside(p, d, f, nxt, head, far_pt, far_d):
    nxt[p] = head[f]
    head[f] = p
    if far_pt[f] < 0 or d > far_d[f] or (d == far_d[f] and p < far_pt[f]):
        far_pt[f] = p
        far_d[f] = d


@njit(cache=True, nogil=True)
def _tri_dist(pts, a, b, c, p):
    """Signed distance of ``p`` from the plane of triangle ``(a, b, c)``; 0 if degenerate."""
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
    if ln == 0.0:
        return 0.0
    return (nx * (pts[p, 0] - pts[a, 0]) + ny * (pts[p, 1] - pts[a, 1]) + nz * (pts[p, 2] - pts[a, 2])) / ln


@njit(cache=True, nogil=True)
def _drop_outside(p, f, pts, fn, fo, nxt, head, far_pt, far_d):
    """Remove point ``p`` from face ``f``'s outside list and refresh its farthest point."""
    q = head[f]
    head[f] = -1
    far_pt[f] = -1
    far_d[f] = 0.0
    while q >= 0:
        nq = nxt[q]
        if q != p:
            _add_outside(q, _dist(pts, fn, fo, f, q), f, nxt, head, far_pt, far_d)
        q = nq
    nxt[p] = -1


@njit(cache=True, nogil=True)
def _quickhull_kernel(pts, eps):
    n = pts.shape[0]
    empty = np.zeros((0, 3), np.int64)
    ndropped = 0

    # --- initial simplex from axis extremes; ties go to the lowest index
    ext = np.empty(6, np.int64)
    for ax in range(3):
        imin = 0
        imax = 0
        for i in range(1, n):
            if pts[i, ax] < pts[imin, ax]:
                imin = i
            if pts[i, ax] > pts[imax, ax]:
                imax = i
        ext[2 * ax] = imin
        ext[2 * ax + 1] = imax
    best = -1.0
    i0 = 0
    i1 = 0
    for a in range(6):
        for b in range(a + 1, 6):
            dx = pts[ext[a], 0] - pts[ext[b], 0]
            dy = pts[ext[a], 1] - pts[ext[b], 1]
            dz = pts[ext[a], 2] - pts[ext[b], 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 > best:
                best = d2
                i0 = min(ext[a], ext[b])
                i1 = max(ext[a], ext[b])
    if np.sqrt(best) <= eps:
        return empty, 1, 0

    ux = pts[i1, 0] - pts[i0, 0]
    uy = pts[i1, 1] - pts[i0, 1]
    uz = pts[i1, 2] - pts[i0, 2]
    lu = np.sqrt(ux * ux + uy * uy + uz * uz)
    ux /= lu
    uy /= lu
    uz /= lu
    best = -1.0
    i2 = -1
    for i in range(n):
        wx = pts[i, 0] - pts[i0, 0]
        wy = pts[i, 1] - pts[i0, 1]
        wz = pts[i, 2] - pts[i0, 2]
        cx = wy * uz - wz * uy
        cy = wz * ux - wx * uz
        cz = wx * uy - wy * ux
        d = np.sqrt(cx * cx + cy * cy + cz * cz)
        if d > best:
            best = d
            i2 = i
    if best <= eps:
        return empty, 2, 0

    vx = pts[i2, 0] - pts[i0, 0]
    vy = pts[i2, 1] - pts[i0, 1]
    vz = pts[i2, 2] - pts[i0, 2]
    nx = uy * vz - uz * vy
    ny = uz * vx - ux * vz
    nz = ux * vy - uy * vx
    ln = np.sqrt(nx * nx + ny * ny + nz * nz)
    nx /= ln
    ny /= ln
    nz /= ln
    best = -1.0
    i3 = -1
    for i in range(n):
        d = abs(nx * (pts[i, 0] - pts[i0, 0]) + ny * (pts[i, 1] - pts[i0, 1]) + nz * (pts[i, 2] - pts[i0, 2]))
        if d > best:
            best = d
            i3 = i
    if best <= eps:
        return empty, 3, 0

    cap = 8 * n + 64
    fv = np.empty((cap, 3), np.int64)
    fn = np.empty((cap, 3), np.float64)
    fo = np.empty(cap, np.float64)
    fnb = np.empty((cap, 3), np.int64)
    alive = np.zeros(cap, np.bool_)
    head = np.full(cap, -1, np.int64)
    far_pt = np.full(cap, -1, np.int64)
    far_d = np.zeros(cap, np.float64)
    mark = np.zeros(cap, np.int64)
    nxt = np.full(n, -1, np.int64)

    simplex = np.array([i0, i1, i2, i3])
    cx = (pts[i0, 0] + pts[i1, 0] + pts[i2, 0] + pts[i3, 0]) / 4.0
    cy = (pts[i0, 1] + pts[i1, 1] + pts[i2, 1] + pts[i3, 1]) / 4.0
    cz = (pts[i0, 2] + pts[i1, 2] + pts[i2, 2] + pts[i3, 2]) / 4.0
    tris = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]])
    for f in range(4):
        fv[f, 0] = simplex[tris[f, 0]]
        fv[f, 1] = simplex[tris[f, 1]]
        fv[f, 2] = simplex[tris[f, 2]]
        _set_plane(pts, fv, fn, fo, f)
        if fn[f, 0] * cx + fn[f, 1] * cy + fn[f, 2] * cz - fo[f] > 0.0:
            t = fv[f, 1]
            fv[f, 1] = fv[f, 2]
            fv[f, 2] = t
            _set_plane(pts, fv, fn, fo, f)
        alive[f] = True
    for f in range(4):
        for j in range(3):
            a = fv[f, j]
            b = fv[f, (j + 1) % 3]
            for g in range(4):
                if g == f:
                    continue
                for k in range(3):
                    if fv[g, k] == b and fv[g, (k + 1) % 3] == a:
                        fnb[f, j] = g
    nfaces = 4

    for p in range(n):
        if p == i0 or p == i1 or p == i2 or p == i3:
            continue
        bd = eps
        bf = -1
        for f in range(4):
            d = _dist(pts, fn, fo, f, p)
            if d > bd:
                bd = d
                bf = f
        if bf >= 0:
            _add_outside(p, bd, bf, nxt, head, far_pt, far_d)

    stack = np.empty(cap, np.int64)
    nstack = 0
    for f in range(4):
        if head[f] >= 0:
            stack[nstack] = f
            nstack += 1

    # work buffers sized for the worst case so the main loop never grows them
    vis = np.empty(cap, np.int64)
    dfs = np.empty(cap, np.int64)
    h_u = np.empty(3 * cap, np.int64)
    h_v = np.empty(3 * cap, np.int64)
    h_f = np.empty(3 * cap, np.int64)
    out_edge = np.full(n, -1, np.int64)
    order = np.empty(3 * cap, np.int64)
    newf = np.empty(3 * cap, np.int64)
    pbuf = np.empty(n, np.int64)
    stamp = 0

    while nstack > 0:
        nstack -= 1
        f0 = stack[nstack]
        if not alive[f0] or head[f0] < 0:
            continue
        eye = far_pt[f0]
        stamp += 2
        # --- visible set (mark == stamp); mark == stamp+1 means not visible
        mark[f0] = stamp
        vis[0] = f0
        nvis = 1
        dfs[0] = f0
        ndfs = 1
        while True:
            while ndfs > 0:
                ndfs -= 1
                g = dfs[ndfs]
                for j in range(3):
                    h = fnb[g, j]
                    if mark[h] == stamp or mark[h] == stamp + 1:
                        continue
                    if _dist(pts, fn, fo, h, eye) > eps:
                        mark[h] = stamp
                        vis[nvis] = h
                        nvis += 1
                        dfs[ndfs] = h
                        ndfs += 1
                    else:
                        mark[h] = stamp + 1
            # horizon: edges of visible faces whose neighbour is not visible
            nh = 0
            for i in range(nvis):
                g = vis[i]
                for j in range(3):
                    h = fnb[g, j]
                    if mark[h] != stamp:
                        h_u[nh] = fv[g, j]
                        h_v[nh] = fv[g, (j + 1) % 3]
                        h_f[nh] = h
                        nh += 1
            # a cone face (u, v, eye) must make a convex edge with the face
            # across the horizon; otherwise that face joins the visible set
            nfold = 0
            for k in range(nh):
                h = h_f[k]
                if mark[h] == stamp:
                    continue
                w = fv[h, 0]
                for j in range(3):
                    if fv[h, j] != h_u[k] and fv[h, j] != h_v[k]:
                        w = fv[h, j]
                if _tri_dist(pts, h_u[k], h_v[k], eye, w) > eps:
                    mark[h] = stamp
                    vis[nvis] = h
                    nvis += 1
                    dfs[ndfs] = h
                    ndfs += 1
                    nfold += 1
            if nfold == 0:
                break

        # --- horizon must be one simple cycle
        ok = True
        for k in range(nh):
            if out_edge[h_u[k]] >= 0:
                ok = False
            out_edge[h_u[k]] = k
        if ok:
            k = 0
            cnt = 0
            while True:
                order[cnt] = k
                cnt += 1
                k = out_edge[h_v[k]]
                if k < 0 or k == 0 or cnt > nh:
                    break
            if k != 0 or cnt != nh:
                ok = False
        for k in range(nh):
            out_edge[h_u[k]] = -1
        if not ok:
            # A pinched horizon means the eye sits within tolerance of a
            # slight concavity left by earlier eps decisions. Its position
            # relative to the hull is not resolvable at this eps: drop it.
            _drop_outside(eye, f0, pts, fn, fo, nxt, head, far_pt, far_d)
            ndropped += 1
            if head[f0] >= 0:
                stack[nstack] = f0
                nstack += 1
            continue

        # --- collect outside points of visible faces, retire those faces
        npb = 0
        for i in range(nvis):
            g = vis[i]
            p = head[g]
            while p >= 0:
                if p != eye:
                    pbuf[npb] = p
                    npb += 1
                p = nxt[p]
            alive[g] = False
            head[g] = -1

        # --- cone of new faces from the horizon to the eye point
        if nfaces + nh > fv.shape[0]:
            while nfaces + nh > fv.shape[0]:
                fv, fn, fo, fnb, alive, head, far_pt, far_d, mark = _grow_faces(
                    fv, fn, fo, fnb, alive, head, far_pt, far_d, mark)
            tmp = np.empty(fv.shape[0], np.int64)
            tmp[:nstack] = stack[:nstack]
            stack = tmp
        for c in range(nh):
            k = order[c]
            f = nfaces + c
            newf[c] = f
            fv[f, 0] = h_u[k]
            fv[f, 1] = h_v[k]
            fv[f, 2] = eye
            if not _set_plane(pts, fv, fn, fo, f):
                return empty, 5, 0
            alive[f] = True
            head[f] = -1
            far_pt[f] = -1
            mark[f] = 0
            h = h_f[k]
            fnb[f, 0] = h
            for j in range(3):
                if fv[h, j] == h_v[k] and fv[h, (j + 1) % 3] == h_u[k]:
                    fnb[h, j] = f
        for c in range(nh):
            f = newf[c]
            fnb[f, 1] = newf[(c + 1) % nh]
            fnb[f, 2] = newf[(c - 1 + nh) % nh]
        nfaces += nh

        # --- reassign orphaned points; anything not above a new face is inside
        for i in range(npb):
            p = pbuf[i]
            bd = eps
            bf = -1
            for c in range(nh):
                f = newf[c]
                d = _dist(pts, fn, fo, f, p)
                if d > bd:
                    bd = d
                    bf = f
            if bf >= 0:
                _add_outside(p, bd, bf, nxt, head, far_pt, far_d)
        for c in range(nh):
            f = newf[c]
            if head[f] >= 0:
                stack[nstack] = f
                nstack += 1

    cnt = 0
    for f in range(nfaces):
        if alive[f]:
            cnt += 1
    out = np.empty((cnt, 3), np.int64)
    cnt = 0
    for f in range(nfaces):
        if alive[f]:
            out[cnt, 0] = fv[f, 0]
            out[cnt, 1] = fv[f, 1]
            out[cnt, 2] = fv[f, 2]
            cnt += 1
    return out, 0, ndropped


def _face_normals(points, faces):
    a, b, c = points[faces[:, 0]], points[faces[:, 1]], points[faces[:, 2]]
    n = np.cross(b - a, c - a)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def quickhull(points, eps: float | None = None) -> HullMesh:
    """Convex hull of ``points`` (``(N, 3)``, N >= 4).

    ``eps`` is the plane tolerance in the input's units; the default is
    :func:`default_epsilon`. Output is deterministic for a fixed input order.
    Raises :class:`HullDegeneracyError` for coincident, collinear or coplanar
    input.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 4:
        raise HullDegeneracyError("input", f"need at least 4 points, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("hull input has non-finite coordinates")
    if eps is None:
        eps = default_epsilon(pts)
    faces, status, _ = _quickhull_kernel(pts, float(eps))
    if status:
        raise HullDegeneracyError(_STAGES[status])
    return HullMesh(np.unique(faces), faces, _face_normals(pts, faces))


def hull_volume(h: HullMesh, points) -> float:
    """Enclosed volume as a sum of signed tetrahedra about the vertex centroid."""
    pts = np.asarray(points, dtype=np.float64)
    o = pts[h.vertex_indices].mean(axis=0)
    a, b, c = (pts[h.faces[:, k]] - o for k in range(3))
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def brute_force_hull(points, eps: float | None = None):
    """O(n^4) oracle: every triangle whose plane has all points on one side.

    Returns ``(vertex_indices, supporting_triangles)``; meant for small inputs.
    """
    pts = np.asarray(points, dtype=np.float64)
    if eps is None:
        eps = default_epsilon(pts)
    tri = np.array(list(combinations(range(len(pts)), 3)), dtype=np.int64)
    a, b, c = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
    n = np.cross(b - a, c - a)
    ln = np.linalg.norm(n, axis=1)
    good = ln > 0
    tri, a, n = tri[good], a[good], n[good] / ln[good, None]
    d = pts @ n.T - np.einsum("ij,ij->i", n, a)
    support = np.all(d <= eps, axis=0) | np.all(d >= -eps, axis=0)
    keep = tri[support]
    return np.unique(keep), keep
