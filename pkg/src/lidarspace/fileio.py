"""Readers and writers for point clouds, meshes and trajectories.

Supported formats:

* PLY, ascii and binary (little or big endian). Vertex ``x y z`` plus any
  extra scalar properties; an optional ``face`` element with a
  ``vertex_indices`` list.
* XYZ, whitespace separated ``x y z`` rows.
* KITTI ``.bin``: flat float32 records ``x y z intensity``.
* TUM trajectories: ``timestamp tx ty tz qx qy qz qw`` rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ParseError(ValueError):
    """A file could not be parsed; the message names the file and location."""

    def __init__(self, path, message, line=None, offset=None):
        where = str(path)
        if line is not None:
            where += f":{line}"
        if offset is not None:
            where += f" @byte {offset}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line
        self.offset = offset


_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass
class PlyElement:
    name: str
    count: int
    # (name, dtype) for scalars, (name, count_dtype, item_dtype) for lists
    properties: list = field(default_factory=list)

    @property
    def has_list(self):
        return any(len(p) == 3 for p in self.properties)


@dataclass
class PlyData:
    """Parsed PLY content. ``elements`` maps element name to a dict of arrays."""

    elements: dict
    comments: list
    fmt: str

    @property
    def vertices(self) -> np.ndarray:
        v = self.elements.get("vertex")
        if v is None or not all(k in v for k in "xyz"):
            raise KeyError("PLY has no vertex x/y/z properties")
        return np.column_stack([v["x"], v["y"], v["z"]]).astype(np.float64)

    @property
    def faces(self) -> np.ndarray | None:
        f = self.elements.get("face")
        if f is None:
            return None
        for key in ("vertex_indices", "vertex_index"):
            if key in f:
                return f[key]
        return None

    def comment_value(self, key: str) -> str | None:
        for c in self.comments:
            parts = c.split(None, 1)
            if len(parts) == 2 and parts[0] == key:
                return parts[1].strip()
        return None


def _parse_header(path, raw: bytes):
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise ParseError(path, "not a PLY file (missing 'ply' magic or end_header)", line=1)
    nl = raw.find(b"\n", end)
    body_start = len(raw) if nl < 0 else nl + 1
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    comments = []
    elements: list[PlyElement] = []
    for lineno, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise ParseError(path, f"unsupported format line {line!r}", line=lineno)
            fmt = tok[1]
        elif tok[0] in ("comment", "obj_info"):
            comments.append(line.split(None, 1)[1] if len(tok) > 1 else "")
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError(path, f"bad element line {line!r}", line=lineno)
            try:
                elements.append(PlyElement(tok[1], int(tok[2])))
            except ValueError:
                raise ParseError(path, f"bad element count {tok[2]!r}", line=lineno) from None
        elif tok[0] == "property":
            if not elements:
                raise ParseError(path, "property before any element", line=lineno)
            try:
                if tok[1] == "list":
                    elements[-1].properties.append((tok[4], _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
                else:
                    elements[-1].properties.append((tok[2], _PLY_TYPES[tok[1]]))
            except (KeyError, IndexError):
                raise ParseError(path, f"bad property line {line!r}", line=lineno) from None
        else:
            raise ParseError(path, f"unknown header keyword {tok[0]!r}", line=lineno)
    if fmt is None:
        raise ParseError(path, "missing format line", line=1)
    return fmt, comments, elements, body_start, len(lines) + 1


def _read_ascii_body(path, text_lines, first_line, elements):
    out = {}
    pos = 0
    for el in elements:
        rows = text_lines[pos:pos + el.count]
        if len(rows) < el.count:
            raise ParseError(path, f"element {el.name!r}: expected {el.count} rows, got {len(rows)}",
                             line=first_line + pos + len(rows))
        data = {}
        if not el.has_list:
            try:
                arr = np.array([r.split() for r in rows], dtype=np.float64).reshape(el.count, -1)
            except ValueError:
                for i, r in enumerate(rows):
                    try:
                        vals = [float(x) for x in r.split()]
                        if len(vals) != len(el.properties):
                            raise ValueError
                    except ValueError:
                        raise ParseError(path, f"bad {el.name} row {r!r}", line=first_line + pos + i) from None
                raise ParseError(path, f"bad {el.name} rows", line=first_line + pos)
            if el.count and arr.shape[1] != len(el.properties):
                raise ParseError(path, f"element {el.name!r}: expected {len(el.properties)} columns",
                                 line=first_line + pos)
            for j, (name, dt) in enumerate(el.properties):
                data[name] = arr[:, j].astype(dt)
        else:
            cols = {p[0]: [] for p in el.properties}
            for i, r in enumerate(rows):
                tok = r.split()
                k = 0
                try:
                    for p in el.properties:
                        if len(p) == 3:
                            n = int(tok[k])
                            cols[p[0]].append([int(float(x)) for x in tok[k + 1:k + 1 + n]])
                            k += 1 + n
                        else:
                            cols[p[0]].append(float(tok[k]))
                            k += 1
                except (ValueError, IndexError):
                    raise ParseError(path, f"bad {el.name} row {r!r}", line=first_line + pos + i) from None
            for p in el.properties:
                data[p[0]] = _lists_to_array(cols[p[0]]) if len(p) == 3 else np.asarray(cols[p[0]], dtype=p[1])
        out[el.name] = data
        pos += el.count
    return out


def _lists_to_array(lists):
    if lists and all(len(x) == len(lists[0]) for x in lists):
        return np.asarray(lists, dtype=np.int64).reshape(len(lists), -1)
    return [np.asarray(x, dtype=np.int64) for x in lists]


def _read_binary_body(path, raw, start, elements, endian):
    out = {}
    off = start
    for el in elements:
        data = {}
        if not el.has_list:
            dt = np.dtype([(name, endian + t) for name, t in el.properties])
            nbytes = dt.itemsize * el.count
            if off + nbytes > len(raw):
                raise ParseError(path, f"truncated {el.name!r} data: need {nbytes} bytes", offset=off)
            arr = np.frombuffer(raw, dtype=dt, count=el.count, offset=off)
            for name, _ in el.properties:
                data[name] = arr[name].astype(arr.dtype[name].newbyteorder("="))
            off += nbytes
        else:
            # fast path: a single fixed-length list per row (triangle faces)
            props = el.properties
            if len(props) == 1 and el.count:
                cnt_t, item_t = np.dtype(endian + props[0][1]), np.dtype(endian + props[0][2])
                if off + cnt_t.itemsize > len(raw):
                    raise ParseError(path, f"truncated {el.name!r} data", offset=off)
                n0 = int(np.frombuffer(raw, dtype=cnt_t, count=1, offset=off)[0])
                rowdt = np.dtype([("n", cnt_t), ("v", item_t, (n0,))])
                if off + rowdt.itemsize * el.count <= len(raw):
                    arr = np.frombuffer(raw, dtype=rowdt, count=el.count, offset=off)
                    if np.all(arr["n"] == n0):
                        data[props[0][0]] = arr["v"].astype(np.int64)
                        off += rowdt.itemsize * el.count
                        out[el.name] = data
                        continue
            cols = {p[0]: [] for p in props}
            for _ in range(el.count):
                for p in props:
                    if len(p) == 3:
                        cdt, idt = np.dtype(endian + p[1]), np.dtype(endian + p[2])
                        if off + cdt.itemsize > len(raw):
                            raise ParseError(path, f"truncated {el.name!r} data", offset=off)
                        n = int(np.frombuffer(raw, dtype=cdt, count=1, offset=off)[0])
                        off += cdt.itemsize
                        if off + n * idt.itemsize > len(raw):
                            raise ParseError(path, f"truncated {el.name!r} list", offset=off)
                        cols[p[0]].append(np.frombuffer(raw, dtype=idt, count=n, offset=off).astype(np.int64))
                        off += n * idt.itemsize
                    else:
                        dt = np.dtype(endian + p[1])
                        if off + dt.itemsize > len(raw):
                            raise ParseError(path, f"truncated {el.name!r} data", offset=off)
                        cols[p[0]].append(np.frombuffer(raw, dtype=dt, count=1, offset=off)[0])
                        off += dt.itemsize
            for p in props:
                data[p[0]] = _lists_to_array([list(x) for x in cols[p[0]]]) if len(p) == 3 else np.asarray(cols[p[0]])
        out[el.name] = data
    return out


def read_ply(path) -> PlyData:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ParseError(path, f"cannot read file ({exc.strerror})") from None
    fmt, comments, elements, body_start, body_line = _parse_header(path, raw)
    if fmt == "ascii":
        text = raw[body_start:].decode("ascii", errors="replace").splitlines()
        text = [t for t in text if t.strip()]
        data = _read_ascii_body(path, text, body_line + 1, elements)
    else:
        data = _read_binary_body(path, raw, body_start, elements, "<" if fmt == "binary_little_endian" else ">")
    return PlyData(elements=data, comments=comments, fmt=fmt)


def write_ply(path, vertices, faces=None, normals=None, comments=(), binary=True, vertex_dtype="f4"):
    """Write a point cloud (``faces=None``) or triangle mesh as PLY."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    ptype = {"f4": "float", "f8": "double"}[vertex_dtype]
    cols = [("x", vertex_dtype), ("y", vertex_dtype), ("z", vertex_dtype)]
    if normals is not None:
        cols += [("nx", vertex_dtype), ("ny", vertex_dtype), ("nz", vertex_dtype)]
    head = ["ply", "format " + ("binary_little_endian 1.0" if binary else "ascii 1.0")]
    head += [f"comment {c}" for c in comments]
    head.append(f"element vertex {len(vertices)}")
    head += [f"property {ptype} {n}" for n, _ in cols]
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        head.append(f"element face {len(faces)}")
        head.append("property list uchar int vertex_indices")
    head.append("end_header")
    header = ("\n".join(head) + "\n").encode("ascii")

    vrec = np.empty(len(vertices), dtype=[(n, "<" + t) for n, t in cols])
    vrec["x"], vrec["y"], vrec["z"] = vertices.T
    if normals is not None:
        normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        vrec["nx"], vrec["ny"], vrec["nz"] = normals.T
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            fh.write(vrec.tobytes())
            if faces is not None:
                frec = np.empty(len(faces), dtype=[("n", "u1"), ("v", "<i4", (3,))])
                frec["n"] = 3
                frec["v"] = faces
                fh.write(frec.tobytes())
        else:
            fmt = "%.9g" if vertex_dtype == "f4" else "%.17g"
            body = np.column_stack([vrec[n].astype(np.float64) for n, _ in cols])
            np.savetxt(fh, body, fmt=fmt)
            if faces is not None:
                np.savetxt(fh, np.column_stack([np.full(len(faces), 3), faces]), fmt="%d")


def write_obj(path, vertices, faces, normals=None):
    with open(path, "w") as fh:
        for v in np.asarray(vertices, dtype=np.float64):
            fh.write("v %.9g %.9g %.9g\n" % tuple(v))
        if normals is not None:
            for n in np.asarray(normals, dtype=np.float64):
                fh.write("vn %.9g %.9g %.9g\n" % tuple(n))
        for f in np.asarray(faces, dtype=np.int64) + 1:
            if normals is not None:
                fh.write(f"f {f[0]}//{f[0]} {f[1]}//{f[1]} {f[2]}//{f[2]}\n")
            else:
                fh.write(f"f {f[0]} {f[1]} {f[2]}\n")


def write_mesh(path, vertices, faces, normals=None, comments=()):
    """Write a triangle mesh, picking PLY or OBJ from the file suffix."""
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        write_obj(path, vertices, faces, normals)
    elif suffix == ".ply":
        write_ply(path, vertices, faces, normals, comments=comments)
    else:
        raise ValueError(f"unsupported mesh format {suffix!r} (use .ply or .obj)")


def read_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tok = line.split()
            if not tok:
                continue
            try:
                if tok[0] == "v":
                    verts.append([float(x) for x in tok[1:4]])
                elif tok[0] == "f":
                    idx = [int(t.split("/")[0]) - 1 for t in tok[1:]]
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
            except ValueError:
                raise ParseError(path, f"bad OBJ line {line.strip()!r}", line=lineno) from None
    return np.asarray(verts, dtype=np.float64).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def read_geometry(path):
    """Return ``(points, faces_or_None)`` from a PLY, OBJ or XYZ file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    suffix = path.suffix.lower()
    if suffix == ".ply":
        ply = read_ply(path)
        faces = ply.faces
        if faces is not None and not isinstance(faces, np.ndarray):
            raise ParseError(path, "only triangle faces are supported")
        return ply.vertices, faces
    if suffix == ".obj":
        return read_obj(path)
    if suffix in (".xyz", ".txt"):
        return read_xyz(path), None
    raise ParseError(path, f"unsupported geometry format {suffix!r}")


def read_xyz(path) -> np.ndarray:
    rows = []
    try:
        fh = open(path)
    except OSError as exc:
        raise ParseError(path, f"cannot read file ({exc.strerror})") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            tok = s.split()
            try:
                if len(tok) < 3:
                    raise ValueError
                rows.append((float(tok[0]), float(tok[1]), float(tok[2])))
            except ValueError:
                raise ParseError(path, f"expected 'x y z', got {s!r}", line=lineno) from None
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3)


def write_xyz(path, points):
    np.savetxt(path, np.asarray(points, dtype=np.float64).reshape(-1, 3), fmt="%.17g")


def read_kitti_bin(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(path, f"cannot read file ({exc.strerror})") from None
    if len(raw) % 16:
        raise ParseError(path, f"size {len(raw)} is not a multiple of 16-byte records",
                         offset=len(raw) - len(raw) % 16)
    return np.frombuffer(raw, dtype="<f4").reshape(-1, 4)[:, :3].astype(np.float64)


def write_kitti_bin(path, points, intensity=None):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rec = np.zeros((len(points), 4), dtype="<f4")
    rec[:, :3] = points
    if intensity is not None:
        rec[:, 3] = intensity
    Path(path).write_bytes(rec.tobytes())


def read_tum(path):
    """Return ``(timestamps, positions, quaternions_xyzw)`` arrays."""
    rows = []
    try:
        fh = open(path)
    except OSError as exc:
        raise ParseError(path, f"cannot read file ({exc.strerror})") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            tok = s.split()
            try:
                if len(tok) != 8:
                    raise ValueError
                rows.append([float(x) for x in tok])
            except ValueError:
                raise ParseError(path, f"expected 'timestamp tx ty tz qx qy qz qw', got {s!r}",
                                 line=lineno) from None
    if not rows:
        raise ParseError(path, "trajectory is empty")
    arr = np.asarray(rows, dtype=np.float64)
    return arr[:, 0], arr[:, 1:4], arr[:, 4:8]


def write_tum(path, timestamps, positions, quaternions):
    arr = np.column_stack([timestamps, positions, quaternions])
    np.savetxt(path, arr, fmt="%.17g")
