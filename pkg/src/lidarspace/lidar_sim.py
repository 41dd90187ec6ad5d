"""Synthetic spinning multi-beam LiDAR over analytic scenes.

Every beam is intersected analytically with the scene primitives, so hit
points, surface normals and moving-object labels are exact ground truth.

Scene files hold one primitive per line, ``kind key=value ...``::

    # a furnished room
    box      center=0,0,1.5 size=12,9,3 hollow=1
    cylinder center=2,2,0.75 radius=0.3 height=1.5
    sphere   center=-3,2,1 radius=0.5
    plane    point=0,0,0 normal=0,0,1 extent=40
    mover sphere radius=0.6 waypoints=2.0:-4,-2,1;4.0:4,-2,1

``box`` takes an optional ``yaw`` (degrees about +z); ``hollow=1`` makes it
a thin-walled shell (a room the sensor may sit in). ``mover`` lines take a
shape and ``waypoints=t:x,y,z;...``; the shape's centre follows the
waypoints linearly and exists only between the first and last waypoint time.

Scanner files are ``key = value`` lines; see :class:`ScannerSpec`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .scan_model import MIN_POINT_NORM, Pose, ScanFrame, Trajectory


DEFAULT_GT_SPACING = 0.05


class SceneError(ValueError):
    """Invalid scene or scanner description, or an impossible sensor placement."""


def _orient(normals, dirs):
    s = np.where(np.einsum("ij,ij->i", normals, dirs) > 0, -1.0, 1.0)
    return normals * s[:, None]


def _safe_inv(d):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(d == 0, np.inf, 1.0 / np.where(d == 0, 1.0, d))


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise SceneError(f"sphere radius must be positive, got {self.radius}")

    def moved(self, center):
        return replace(self, center=tuple(center))

    def contains(self, p) -> bool:
        return float(np.linalg.norm(np.asarray(p) - self.center)) < self.radius

    def intersect(self, o, d):
        oc = o - np.asarray(self.center)
        b = d @ oc
        c0 = oc @ oc - self.radius ** 2
        disc = b * b - c0
        t = np.full(len(d), np.inf)
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t1 = -b - sq
        t2 = -b + sq
        tt = np.where(t1 > 1e-9, t1, t2)
        ok = hit & (tt > 1e-9)
        t[ok] = tt[ok]
        p = o + d * np.where(ok, t, 0.0)[:, None]
        n = (p - np.asarray(self.center)) / self.radius
        return t, _orient(n, d)

    def sample_surface(self, spacing, bounds=None):
        n = max(8, int(math.ceil(4 * math.pi * self.radius ** 2 / spacing ** 2)))
        i = np.arange(n) + 0.5
        phi = np.arccos(1 - 2 * i / n)
        th = math.pi * (1 + 5 ** 0.5) * i
        u = np.column_stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)])
        return np.asarray(self.center) + self.radius * u

    def distance(self, pts):
        return np.abs(np.linalg.norm(pts - np.asarray(self.center), axis=1) - self.radius)


@dataclass(frozen=True)
class Box:
    center: tuple
    size: tuple
    yaw: float = 0.0
    hollow: bool = False

    def __post_init__(self):
        if min(self.size) <= 0:
            raise SceneError(f"box size must be positive, got {self.size}")

    def moved(self, center):
        return replace(self, center=tuple(center))

    @property
    def _rot(self):
        c, s = math.cos(math.radians(self.yaw)), math.sin(math.radians(self.yaw))
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def _local(self, p):
        return (np.asarray(p, dtype=np.float64) - np.asarray(self.center)) @ self._rot

    def contains(self, p) -> bool:
        if self.hollow:
            return False
        return bool(np.all(np.abs(self._local(p)) < np.asarray(self.size) / 2))

    def intersect(self, o, d):
        R = self._rot
        ol = (o - np.asarray(self.center)) @ R
        dl = d @ R
        h = np.asarray(self.size, dtype=np.float64) / 2
        inv = _safe_inv(dl)
        with np.errstate(invalid="ignore"):
            t1 = (-h - ol) * inv
            t2 = (h - ol) * inv
        tmin = np.fmin(t1, t2)
        tmax = np.fmax(t1, t2)
        tnear = tmin.max(axis=1)
        tfar = tmax.min(axis=1)
        hit = (tnear <= tfar) & (tfar > 1e-9)
        use_far = tnear <= 1e-9
        if not self.hollow:
            hit &= ~use_far
        t = np.where(use_far, tfar, tnear)
        axis = np.where(use_far, tmax.argmin(axis=1), tmin.argmax(axis=1))
        nl = np.zeros_like(dl)
        nl[np.arange(len(dl)), axis] = 1.0
        n = _orient(nl @ R.T, d)
        return np.where(hit, t, np.inf), n

    def _faces(self):
        R = self._rot
        h = np.asarray(self.size, dtype=np.float64) / 2
        for ax in range(3):
            for sgn in (-1.0, 1.0):
                u, v = [a for a in range(3) if a != ax]
                yield ax, sgn, u, v, h, R

    def sample_surface(self, spacing, bounds=None):
        out = []
        for ax, sgn, u, v, h, R in self._faces():
            nu = max(2, int(math.ceil(2 * h[u] / spacing)) + 1)
            nv = max(2, int(math.ceil(2 * h[v] / spacing)) + 1)
            gu, gv = np.meshgrid(np.linspace(-h[u], h[u], nu), np.linspace(-h[v], h[v], nv), indexing="ij")
            loc = np.zeros((gu.size, 3))
            loc[:, ax] = sgn * h[ax]
            loc[:, u] = gu.ravel()
            loc[:, v] = gv.ravel()
            out.append(loc @ R.T + np.asarray(self.center))
        return np.vstack(out)

    def distance(self, pts):
        q = np.abs(self._local(pts)) - np.asarray(self.size) / 2
        outside = np.linalg.norm(np.maximum(q, 0), axis=1)
        inside = np.minimum(q.max(axis=1), 0)
        return np.abs(outside + inside)


@dataclass(frozen=True)
class Cylinder:
    """Capped cylinder with a vertical axis; ``center`` is the mid-height point."""

    center: tuple
    radius: float
    height: float

    def __post_init__(self):
        if not (self.radius > 0 and self.height > 0):
            raise SceneError("cylinder radius and height must be positive")

    def moved(self, center):
        return replace(self, center=tuple(center))

    def contains(self, p) -> bool:
        q = np.asarray(p, dtype=np.float64) - np.asarray(self.center)
        return bool(math.hypot(q[0], q[1]) < self.radius and abs(q[2]) < self.height / 2)

    def intersect(self, o, d):
        c = np.asarray(self.center, dtype=np.float64)
        oc = o - c
        hz = self.height / 2
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = d[:, 0] * oc[0] + d[:, 1] * oc[1]
        c0 = oc[0] ** 2 + oc[1] ** 2 - self.radius ** 2
        disc = b * b - a * c0
        ok = (disc >= 0) & (a > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ts = (-b - np.sqrt(np.where(ok, disc, 0.0))) / np.where(a > 0, a, 1.0)
        zs = oc[2] + ts * d[:, 2]
        side = ok & (ts > 1e-9) & (np.abs(zs) <= hz)
        t = np.where(side, ts, np.inf)
        n = np.zeros_like(d)
        ps = oc + d * np.where(side, ts, 0.0)[:, None]
        n[:, 0], n[:, 1] = ps[:, 0] / self.radius, ps[:, 1] / self.radius
        invz = _safe_inv(d[:, 2])
        for zc in (-hz, hz):
            with np.errstate(invalid="ignore"):
                tc = (zc - oc[2]) * invz
            pc = oc + d * np.where(np.isfinite(tc), tc, 0.0)[:, None]
            cap = (tc > 1e-9) & np.isfinite(tc) & (pc[:, 0] ** 2 + pc[:, 1] ** 2 <= self.radius ** 2) & (tc < t)
            t = np.where(cap, tc, t)
            n[cap] = (0.0, 0.0, 1.0)
        return t, _orient(n, d)

    def sample_surface(self, spacing, bounds=None):
        c = np.asarray(self.center, dtype=np.float64)
        na = max(8, int(math.ceil(2 * math.pi * self.radius / spacing)))
        nz = max(2, int(math.ceil(self.height / spacing)) + 1)
        th, z = np.meshgrid(np.linspace(0, 2 * math.pi, na, endpoint=False),
                            np.linspace(-self.height / 2, self.height / 2, nz), indexing="ij")
        side = np.column_stack([self.radius * np.cos(th.ravel()), self.radius * np.sin(th.ravel()), z.ravel()])
        g = np.arange(-self.radius, self.radius + spacing / 2, spacing)
        gx, gy = np.meshgrid(g, g, indexing="ij")
        disk = np.column_stack([gx.ravel(), gy.ravel()])
        disk = disk[np.hypot(disk[:, 0], disk[:, 1]) <= self.radius]
        caps = [np.column_stack([disk, np.full(len(disk), s * self.height / 2)]) for s in (-1, 1)]
        return np.vstack([side] + caps) + c

    def distance(self, pts):
        q = pts - np.asarray(self.center)
        dr = np.hypot(q[:, 0], q[:, 1]) - self.radius
        dz = np.abs(q[:, 2]) - self.height / 2
        outside = np.hypot(np.maximum(dr, 0), np.maximum(dz, 0))
        inside = np.minimum(np.maximum(dr, dz), 0)
        return np.abs(outside + inside)


@dataclass(frozen=True)
class Plane:
    """Square patch of half-width ``extent`` centred on ``point``."""

    point: tuple
    normal: tuple
    extent: float = 50.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if not np.linalg.norm(n) > 0:
            raise SceneError("plane normal must be non-zero")
        object.__setattr__(self, "normal", tuple(n / np.linalg.norm(n)))

    def moved(self, center):
        return replace(self, point=tuple(center))

    @property
    def center(self):
        return self.point

    def contains(self, p) -> bool:
        return False

    def _basis(self):
        n = np.asarray(self.normal)
        a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = np.cross(n, a)
        u /= np.linalg.norm(u)
        return u, np.cross(n, u), n

    def intersect(self, o, d):
        u, v, n = self._basis()
        p0 = np.asarray(self.point, dtype=np.float64)
        dn = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((p0 - o) @ n) / dn
        hitp = o + d * np.where(np.isfinite(t), t, 0.0)[:, None] - p0
        ok = np.isfinite(t) & (t > 1e-9) & (np.abs(hitp @ u) <= self.extent) & (np.abs(hitp @ v) <= self.extent)
        return np.where(ok, t, np.inf), _orient(np.tile(n, (len(d), 1)), d)

    def sample_surface(self, spacing, bounds=None):
        u, v, n = self._basis()
        p0 = np.asarray(self.point, dtype=np.float64)
        lo_u = lo_v = -self.extent
        hi_u = hi_v = self.extent
        if bounds is not None:
            corners = np.array([[x, y, z] for x in bounds[:, 0] for y in bounds[:, 1] for z in bounds[:, 2]]) - p0
            lo_u, hi_u = max(lo_u, (corners @ u).min()), min(hi_u, (corners @ u).max())
            lo_v, hi_v = max(lo_v, (corners @ v).min()), min(hi_v, (corners @ v).max())
            if lo_u > hi_u or lo_v > hi_v:
                return np.zeros((0, 3))
        gu, gv = np.meshgrid(np.arange(lo_u, hi_u + spacing / 2, spacing),
                             np.arange(lo_v, hi_v + spacing / 2, spacing), indexing="ij")
        return p0 + gu.ravel()[:, None] * u + gv.ravel()[:, None] * v

    def distance(self, pts):
        u, v, n = self._basis()
        q = pts - np.asarray(self.point)
        du = np.maximum(np.abs(q @ u) - self.extent, 0)
        dv = np.maximum(np.abs(q @ v) - self.extent, 0)
        return np.sqrt((q @ n) ** 2 + du ** 2 + dv ** 2)


@dataclass(frozen=True)
class Mover:
    """A primitive whose centre follows ``positions`` at ``times`` (linear).

    The mover exists only for ``times[0] <= t <= times[-1]``.
    """

    shape: object
    times: tuple
    positions: tuple

    def __post_init__(self):
        if len(self.times) < 1 or len(self.times) != len(self.positions):
            raise SceneError("mover needs matching waypoint times and positions")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise SceneError("mover waypoint times must be strictly increasing")

    def active(self, t: float) -> bool:
        return self.times[0] <= t <= self.times[-1]

    def at(self, t: float):
        pos = np.asarray(self.positions, dtype=np.float64)
        c = [np.interp(t, self.times, pos[:, k]) for k in range(3)]
        return self.shape.moved(c)

    def swept_contains(self, pts, margin: float = 0.0) -> np.ndarray:
        """True for points inside the volume the mover sweeps (plus ``margin``)."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        pos = np.asarray(self.positions, dtype=np.float64)
        inside = np.zeros(len(pts), dtype=bool)
        if isinstance(self.shape, Sphere):
            r = self.shape.radius + margin
            segs = [(pos[i], pos[i + 1]) for i in range(len(pos) - 1)] or [(pos[0], pos[0])]
            for a, b in segs:
                ab = b - a
                L2 = ab @ ab
                s = np.clip(((pts - a) @ ab) / L2, 0, 1) if L2 > 0 else np.zeros(len(pts))
                inside |= np.linalg.norm(pts - (a + s[:, None] * ab), axis=1) <= r
            return inside
        # other shapes: dense sampling of the path
        for t in np.linspace(self.times[0], self.times[-1], 200):
            shape = self.at(t)
            inside |= np.array([shape.contains(p) for p in pts]) | (shape.distance(pts) <= margin)
        return inside


@dataclass
class SceneSpec:
    static: list = field(default_factory=list)
    movers: list = field(default_factory=list)

    def primitives_at(self, t: float):
        """``(primitive, is_mover)`` pairs present at time ``t``."""
        out = [(p, False) for p in self.static]
        out += [(m.at(t), True) for m in self.movers if m.active(t)]
        return out

    @classmethod
    def read(cls, path) -> "SceneSpec":
        return parse_scene(Path(path).read_text(), source=str(path))


_SCANNER_KEYS = {
    "ring_count": int, "fov_min": float, "fov_max": float, "horizontal_resolution": float,
    "rate": float, "noise_sigma": float, "max_range": float,
}


@dataclass(frozen=True)
class ScannerSpec:
    """Ring-pattern scanner; angles in degrees, ranges in metres."""

    ring_count: int = 16
    fov_min: float = -15.0
    fov_max: float = 15.0
    horizontal_resolution: float = 0.2
    rate: float = 10.0
    noise_sigma: float = 0.01
    max_range: float = 100.0

    def __post_init__(self):
        if self.ring_count < 2:
            raise SceneError("ring_count must be >= 2")
        if not self.fov_max > self.fov_min:
            raise SceneError("fov_max must exceed fov_min")
        if not (self.horizontal_resolution > 0 and self.rate > 0 and self.max_range > 0):
            raise SceneError("horizontal_resolution, rate and max_range must be positive")
        if self.noise_sigma < 0:
            raise SceneError("noise_sigma must be non-negative")

    @property
    def azimuth_steps(self) -> int:
        return int(round(360.0 / self.horizontal_resolution))

    @property
    def ring_elevations(self) -> np.ndarray:
        return np.radians(np.linspace(self.fov_min, self.fov_max, self.ring_count))

    def beam_directions(self) -> np.ndarray:
        """Unit beam directions in sensor coordinates, azimuth-major order."""
        az = np.radians(np.arange(self.azimuth_steps) * self.horizontal_resolution)
        A, E = np.meshgrid(az, self.ring_elevations, indexing="ij")
        return np.column_stack([(np.cos(E) * np.cos(A)).ravel(), (np.cos(E) * np.sin(A)).ravel(),
                                np.sin(E).ravel()])

    @classmethod
    def read(cls, path) -> "ScannerSpec":
        return parse_scanner(Path(path).read_text(), source=str(path))


def _vec(s, key, line, source):
    try:
        v = tuple(float(x) for x in s.split(","))
    except ValueError:
        raise SceneError(f"{source}:{line}: {key} must be comma-separated numbers, got {s!r}") from None
    if len(v) != 3:
        raise SceneError(f"{source}:{line}: {key} needs 3 components, got {s!r}")
    return v


def _num(s, key, line, source):
    try:
        return float(s)
    except ValueError:
        raise SceneError(f"{source}:{line}: {key} must be a number, got {s!r}") from None


_SHAPE_ARGS = {
    "sphere": ({"center": "vec", "radius": "num"}, Sphere),
    "box": ({"center": "vec", "size": "vec", "yaw": "num", "hollow": "bool"}, Box),
    "cylinder": ({"center": "vec", "radius": "num", "height": "num"}, Cylinder),
    "plane": ({"point": "vec", "normal": "vec", "extent": "num"}, Plane),
}


def _build_shape(kind, kv, lineno, source, *, skip_center=False):
    if kind not in _SHAPE_ARGS:
        raise SceneError(f"{source}:{lineno}: unknown primitive {kind!r}")
    spec, ctor = _SHAPE_ARGS[kind]
    args = {}
    for k, v in kv.items():
        if k not in spec:
            raise SceneError(f"{source}:{lineno}: {kind} has no parameter {k!r}")
        typ = spec[k]
        if typ == "vec":
            args[k] = _vec(v, k, lineno, source)
        elif typ == "num":
            args[k] = _num(v, k, lineno, source)
        else:
            args[k] = v.lower() in ("1", "true", "yes", "on")
    if skip_center:
        args.setdefault("point" if kind == "plane" else "center", (0.0, 0.0, 0.0))
    try:
        return ctor(**args)
    except TypeError as exc:
        raise SceneError(f"{source}:{lineno}: {kind}: {exc}") from None


def parse_scene(text: str, source: str = "<scene>") -> SceneSpec:
    scene = SceneSpec()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kv = {}
        for t in tok[1:]:
            if "=" not in t:
                if tok[0] == "mover" and t == tok[1]:
                    continue
                raise SceneError(f"{source}:{lineno}: expected key=value, got {t!r}")
            k, v = t.split("=", 1)
            kv[k] = v
        if tok[0] == "mover":
            if len(tok) < 2:
                raise SceneError(f"{source}:{lineno}: mover needs a shape")
            wp = kv.pop("waypoints", None)
            if wp is None:
                raise SceneError(f"{source}:{lineno}: mover needs waypoints=t:x,y,z;...")
            times, positions = [], []
            for item in wp.split(";"):
                if ":" not in item:
                    raise SceneError(f"{source}:{lineno}: bad waypoint {item!r}")
                ts, ps = item.split(":", 1)
                times.append(_num(ts, "waypoint time", lineno, source))
                positions.append(_vec(ps, "waypoint", lineno, source))
            shape = _build_shape(tok[1], kv, lineno, source, skip_center=True)
            scene.movers.append(Mover(shape, tuple(times), tuple(positions)))
        else:
            scene.static.append(_build_shape(tok[0], kv, lineno, source))
    return scene


def parse_scanner(text: str, source: str = "<scanner>") -> ScannerSpec:
    kw = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SceneError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in _SCANNER_KEYS:
            raise SceneError(f"{source}:{lineno}: unknown scanner key {k!r}")
        try:
            kw[k] = _SCANNER_KEYS[k](v)
        except ValueError:
            raise SceneError(f"{source}:{lineno}: bad value for {k}: {v!r}") from None
    return ScannerSpec(**kw)


def format_scanner(spec: ScannerSpec) -> str:
    return "".join(f"{f.name} = {getattr(spec, f.name)}\n" for f in fields(spec))


@dataclass
class SimFrame:
    """A simulated frame with per-point ground truth.

    ``gt_normals`` are in sensor coordinates and face the sensor;
    ``gt_points`` are the noise-free hits in world coordinates.
    """

    frame: ScanFrame
    gt_normals: np.ndarray
    gt_dynamic: np.ndarray
    gt_points: np.ndarray


def cast_rays(scene: SceneSpec, t: float, origin, dirs):
    """Nearest hit of world rays against the scene at time ``t``.

    Returns ``(range, normal, is_mover)``; misses have infinite range.
    """
    origin = np.asarray(origin, dtype=np.float64)
    best = np.full(len(dirs), np.inf)
    normals = np.zeros_like(dirs)
    mover = np.zeros(len(dirs), dtype=bool)
    for prim, is_mover in scene.primitives_at(t):
        tt, nn = prim.intersect(origin, dirs)
        closer = tt < best
        best[closer] = tt[closer]
        normals[closer] = nn[closer]
        mover[closer] = is_mover
    return best, normals, mover


def frame_times(traj: Trajectory, scanner: ScannerSpec, frames: int) -> np.ndarray:
    return traj.start + np.arange(frames) / scanner.rate


def simulate(scene: SceneSpec, scanner: ScannerSpec, sensor_traj: Trajectory, frames: int | None = None,
             *, seed: int) -> list[SimFrame]:
    """Simulate ``frames`` sweeps at ``scanner.rate`` from the trajectory start.

    Each frame is an instantaneous snapshot. Range noise is Gaussian along
    the beam, drawn from a generator seeded by ``(seed, frame index)``.
    Coordinates are rounded to float32, the precision of the PLY writer.
    """
    if frames is None:
        frames = int(math.floor((sensor_traj.end - sensor_traj.start) * scanner.rate + 1e-9)) + 1
    times = frame_times(sensor_traj, scanner, frames)
    if frames and times[-1] > sensor_traj.end + 1e-9:
        raise SceneError(f"trajectory ends at {sensor_traj.end} s but frame {frames - 1} is at {times[-1]} s")
    dirs_local = scanner.beam_directions()
    out = []
    for i, t in enumerate(times):
        pose = sensor_traj.interpolate(float(t))
        for prim, is_mover in scene.primitives_at(float(t)):
            if prim.contains(pose.position):
                raise SceneError(f"frame {i}: sensor at {pose.position.tolist()} is inside {type(prim).__name__}")
        R = pose.rotation
        dirs = dirs_local @ R.T
        rng_true, nrm, mover = cast_rays(scene, float(t), pose.position, dirs)
        noise = np.random.default_rng([seed, i]).normal(0.0, scanner.noise_sigma, len(dirs))
        hit = np.isfinite(rng_true) & (rng_true <= scanner.max_range)
        r = rng_true[hit] + noise[hit]
        pts = (dirs_local[hit] * r[:, None]).astype(np.float32).astype(np.float64)
        ok = np.linalg.norm(pts, axis=1) > 2 * MIN_POINT_NORM
        gt_world = pose.position + dirs[hit] * rng_true[hit][:, None]
        frame = ScanFrame(i, float(t), pose, pts[ok])
        out.append(SimFrame(frame, (nrm[hit] @ R)[ok], mover[hit][ok], gt_world[ok]))
    return out


def visible_surface_samples(scene: SceneSpec, hits, spacing: float = DEFAULT_GT_SPACING,
                            radius: float = 0.5) -> np.ndarray:
    """Dense samples of the static surfaces lying within ``radius`` of any hit.

    This is the observed part of the analytic scene: ground truth for
    completeness metrics that does not penalise never-scanned surfaces.
    An infinite ``radius`` returns every static surface.
    """
    if math.isinf(radius):
        return np.vstack([p.sample_surface(spacing) for p in scene.static] or [np.zeros((0, 3))])
    hits = np.asarray(hits, dtype=np.float64).reshape(-1, 3)
    bounds = np.stack([hits.min(axis=0) - radius, hits.max(axis=0) + radius], axis=0)
    samples = np.vstack([p.sample_surface(spacing, bounds) for p in scene.static] or [np.zeros((0, 3))])
    inbox = np.all((samples >= bounds[0]) & (samples <= bounds[1]), axis=1)
    samples = samples[inbox]
    if len(samples) == 0:
        return samples
    d, _ = cKDTree(hits).query(samples, distance_upper_bound=radius)
    return samples[np.isfinite(d)]


def static_surface_distance(scene: SceneSpec, pts) -> np.ndarray:
    """Distance from each point to the nearest static primitive surface."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if not scene.static:
        return np.full(len(pts), np.inf)
    return np.min([p.distance(pts) for p in scene.static], axis=0)


def straight_trajectory(start, end, t0: float, t1: float, n: int = 2, yaw_deg: float = 0.0) -> Trajectory:
    """Constant-heading straight-line trajectory with ``n`` samples."""
    ts = np.linspace(t0, t1, n)
    a = np.linspace(0, 1, n)[:, None]
    pos = (1 - a) * np.asarray(start, dtype=np.float64) + a * np.asarray(end, dtype=np.float64)
    h = math.radians(yaw_deg) / 2
    q = np.tile([0.0, 0.0, math.sin(h), math.cos(h)], (n, 1))
    return Trajectory(ts, pos, q)


def ellipse_trajectory(center, radii, z: float, period: float, duration: float, n: int = 200) -> Trajectory:
    """Counter-clockwise loop around ``center`` (x, y) at height ``z``, heading along the path."""
    ts = np.linspace(0.0, duration, n)
    ph = 2 * math.pi * ts / period
    a, b = radii
    pos = np.column_stack([center[0] + a * np.cos(ph), center[1] + b * np.sin(ph), np.full(n, float(z))])
    h = np.arctan2(b * np.cos(ph), -a * np.sin(ph)) / 2
    q = np.column_stack([np.zeros(n), np.zeros(n), np.sin(h), np.cos(h)])
    return Trajectory(ts, pos, q)


def pose_trajectory(times, poses) -> Trajectory:
    return Trajectory.from_poses(times, [p if isinstance(p, Pose) else Pose(p) for p in poses])
