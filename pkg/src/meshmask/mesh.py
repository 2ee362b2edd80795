"""Triangle mesh container, PLY I/O, vertex normals and vertex adjacency."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_COLOR = 0.5  # mid-gray fill when a mesh carries no colors

_PLY_SCALARS = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class PlyError(ValueError):
    """Malformed or unsupported PLY content, annotated with a location."""


def _freeze(arr):
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TriMesh:
    """Immutable triangle mesh.

    positions : (V, 3) float64, meters
    faces     : (F, 3) int64 vertex indices
    colors    : (V, 3) float64 RGB in [0, 1]; mid-gray when the source had none
    normals   : (V, 3) float64 unit vectors, or None when not yet computed
    """

    positions: np.ndarray
    faces: np.ndarray
    colors: np.ndarray = None
    normals: np.ndarray = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= len(pos)):
            raise ValueError(
                f"face index out of range: mesh has {len(pos)} vertices, "
                f"faces reference up to {faces.max()}"
            )
        colors = self.colors
        if colors is None:
            colors = np.full((len(pos), 3), DEFAULT_COLOR)
        colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        if len(colors) != len(pos):
            raise ValueError("colors and positions disagree in length")
        if colors.size and (colors.min() < 0.0 or colors.max() > 1.0):
            raise ValueError("colors must lie in [0, 1]")
        normals = self.normals
        if normals is not None:
            normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
            if len(normals) != len(pos):
                raise ValueError("normals and positions disagree in length")
            norms = np.linalg.norm(normals, axis=1)
            bad = np.abs(norms - 1.0) > 1e-6
            if np.any(bad & (norms > 0)):
                raise ValueError("normals must be unit length or zero")
        object.__setattr__(self, "positions", _freeze(pos))
        object.__setattr__(self, "faces", _freeze(faces))
        object.__setattr__(self, "colors", _freeze(colors))
        object.__setattr__(self, "normals", None if normals is None else _freeze(normals))

    @property
    def num_vertices(self) -> int:
        return len(self.positions)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def with_normals(self, normals: np.ndarray) -> "TriMesh":
        return dataclasses.replace(self, normals=normals)

    def with_colors(self, colors: np.ndarray) -> "TriMesh":
        return dataclasses.replace(self, colors=colors)


@dataclass(frozen=True)
class EdgeList:
    """Unique undirected edges (u < v) taken from face boundaries."""

    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ValueError("edge list contains a self-loop")
            lo = np.minimum(edges[:, 0], edges[:, 1])
            hi = np.maximum(edges[:, 0], edges[:, 1])
            edges = np.stack([lo, hi], axis=1)
            if len(np.unique(edges, axis=0)) != len(edges):
                raise ValueError("edge list contains duplicates")
        object.__setattr__(self, "edges", _freeze(edges))

    def __len__(self) -> int:
        return len(self.edges)


def vertex_adjacency(mesh: TriMesh) -> EdgeList:
    """One undirected edge per unordered vertex pair sharing at least one face edge."""
    f = mesh.faces
    if not len(f):
        return EdgeList(np.empty((0, 2), dtype=np.int64))
    raw = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [0, 2]]])
    lo = np.minimum(raw[:, 0], raw[:, 1])
    hi = np.maximum(raw[:, 0], raw[:, 1])
    keep = lo != hi  # degenerate faces may repeat a vertex
    edges = np.unique(np.stack([lo[keep], hi[keep]], axis=1), axis=0)
    return EdgeList(edges)


def compute_vertex_normals(mesh: TriMesh) -> TriMesh:
    """Area-weighted vertex normals from face windings.

    Each vertex normal is the normalized sum of incident face normals weighted
    by face area (the cross product of two face edges is already twice the
    area-weighted normal). Isolated vertices receive the zero vector and
    degenerate faces contribute nothing.
    """
    if not len(mesh.faces):
        raise ValueError("cannot compute vertex normals on a mesh without faces")
    p = mesh.positions
    f = mesh.faces
    cross = np.cross(p[f[:, 1]] - p[f[:, 0]], p[f[:, 2]] - p[f[:, 0]])
    acc = np.zeros_like(p)
    for c in range(3):
        np.add.at(acc, f[:, c], cross)
    norms = np.linalg.norm(acc, axis=1)
    out = np.zeros_like(acc)
    nz = norms > 0
    out[nz] = acc[nz] / norms[nz, None]
    return mesh.with_normals(out)


# ---------------------------------------------------------------------------
# PLY reading


def _parse_header(data: bytes, path):
    """Parse the PLY header; returns (format, elements, payload offset)."""
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise PlyError(f"{path}: not a PLY file (missing 'ply'/'end_header')")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise PlyError(f"{path}: header is not newline-terminated")
    offset = nl + 1
    header = data[:end].decode("ascii", errors="replace")
    fmt = None
    elements = []  # (name, count, [(prop_name, dtype, list_count_dtype or None)])
    for lineno, line in enumerate(header.splitlines(), start=1):
        tokens = line.strip().split()
        if not tokens or tokens[0] in ("ply", "comment", "obj_info"):
            continue
        kind = tokens[0]
        if kind == "format":
            if len(tokens) < 2:
                raise PlyError(f"{path}:{lineno}: malformed format line")
            fmt = tokens[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise PlyError(
                    f"{path}:{lineno}: unsupported PLY format {fmt!r} "
                    "(ascii and binary_little_endian only)"
                )
        elif kind == "element":
            if len(tokens) != 3:
                raise PlyError(f"{path}:{lineno}: malformed element line")
            try:
                count = int(tokens[2])
            except ValueError:
                raise PlyError(f"{path}:{lineno}: bad element count {tokens[2]!r}") from None
            elements.append((tokens[1], count, []))
        elif kind == "property":
            if not elements:
                raise PlyError(f"{path}:{lineno}: property before any element")
            if tokens[1] == "list":
                if len(tokens) != 5:
                    raise PlyError(f"{path}:{lineno}: malformed list property")
                cnt_t, val_t, name = tokens[2], tokens[3], tokens[4]
                if cnt_t not in _PLY_SCALARS or val_t not in _PLY_SCALARS:
                    raise PlyError(f"{path}:{lineno}: unknown list property type")
                elements[-1][2].append((name, _PLY_SCALARS[val_t], _PLY_SCALARS[cnt_t]))
            else:
                if len(tokens) != 3:
                    raise PlyError(f"{path}:{lineno}: malformed property line")
                if tokens[1] not in _PLY_SCALARS:
                    raise PlyError(f"{path}:{lineno}: unknown property type {tokens[1]!r}")
                elements[-1][2].append((tokens[2], _PLY_SCALARS[tokens[1]], None))
    if fmt is None:
        raise PlyError(f"{path}: header has no format line")
    return fmt, elements, offset


def _read_ascii_elements(data, offset, elements, path):
    text = data[offset:].decode("ascii", errors="replace")
    lines = text.splitlines()
    out = {}
    li = 0
    header_lines = data[:offset].count(b"\n")
    for name, count, props in elements:
        rows = []
        for i in range(count):
            if li >= len(lines):
                raise PlyError(
                    f"{path}: truncated payload: expected {count} '{name}' rows, "
                    f"got {i} (line {header_lines + li + 1})"
                )
            tokens = lines[li].split()
            li += 1
            row = {}
            t = 0
            for pname, dtype, list_dtype in props:
                try:
                    if list_dtype is None:
                        row[pname] = float(tokens[t])
                        t += 1
                    else:
                        n = int(tokens[t])
                        row[pname] = [float(x) for x in tokens[t + 1 : t + 1 + n]]
                        if len(row[pname]) != n:
                            raise IndexError
                        t += 1 + n
                except (ValueError, IndexError):
                    raise PlyError(
                        f"{path}:{header_lines + li}: malformed '{name}' row "
                        f"(property {pname!r})"
                    ) from None
            rows.append(row)
        out[name] = rows
    return out


def _read_binary_elements(data, offset, elements, path):
    out = {}
    pos = offset
    for name, count, props in elements:
        has_list = any(p[2] is not None for p in props)
        if not has_list:
            dt = np.dtype([(p[0], "<" + p[1]) for p in props])
            need = dt.itemsize * count
            if len(data) - pos < need:
                raise PlyError(
                    f"{path}: truncated payload in element '{name}' at byte {pos}: "
                    f"need {need} bytes, have {len(data) - pos}"
                )
            arr = np.frombuffer(data, dtype=dt, count=count, offset=pos)
            pos += need
            out[name] = arr
        else:
            # Fast path: a single list property with uniform count 3 (triangles).
            rows, pos = _read_binary_list_element(data, pos, name, count, props, path)
            out[name] = rows
    return out


def _read_binary_list_element(data, pos, name, count, props, path):
    if len(props) != 1:
        raise PlyError(f"{path}: element '{name}' mixes list and scalar properties")
    pname, val_t, cnt_t = props[0]
    cnt_dt = np.dtype("<" + cnt_t)
    val_dt = np.dtype("<" + val_t)
    stride = cnt_dt.itemsize + 3 * val_dt.itemsize
    if len(data) - pos >= stride * count:
        block = np.frombuffer(data, dtype=np.uint8, count=stride * count, offset=pos)
        counts = block.reshape(count, stride)[:, : cnt_dt.itemsize].copy().view(cnt_dt).ravel()
        if np.all(counts == 3):
            vals = (
                block.reshape(count, stride)[:, cnt_dt.itemsize :]
                .copy()
                .view(val_dt)
                .reshape(count, 3)
            )
            return [{pname: row.tolist()} for row in vals], pos + stride * count
    # Slow path: variable-length lists; walk entries to locate errors precisely.
    rows = []
    for i in range(count):
        if len(data) - pos < cnt_dt.itemsize:
            raise PlyError(
                f"{path}: truncated payload: element '{name}' row {i} at byte {pos}"
            )
        n = int(np.frombuffer(data, dtype=cnt_dt, count=1, offset=pos)[0])
        pos += cnt_dt.itemsize
        need = n * val_dt.itemsize
        if len(data) - pos < need:
            raise PlyError(
                f"{path}: truncated payload: element '{name}' row {i} at byte {pos}"
            )
        vals = np.frombuffer(data, dtype=val_dt, count=n, offset=pos)
        pos += need
        rows.append({pname: vals.tolist()})
    return rows, pos


def _column(rows, key, fmt_binary):
    if fmt_binary and isinstance(rows, np.ndarray):
        return np.asarray(rows[key], dtype=np.float64)
    return np.array([r[key] for r in rows], dtype=np.float64)


def load_ply(path) -> TriMesh:
    """Load a triangle mesh from an ASCII or binary-little-endian PLY file.

    Vertex colors (8-bit red/green/blue) are rescaled to [0, 1]; normals are
    kept when present. Faces must be triangles; anything else is rejected with
    the offending face named.
    """
    path = Path(path)
    data = path.read_bytes()
    fmt, elements, offset = _parse_header(data, path)
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise PlyError(f"{path}: no 'vertex' element in header")
    vprops = {p[0] for e in elements if e[0] == "vertex" for p in e[2]}
    if not {"x", "y", "z"} <= vprops:
        raise PlyError(f"{path}: vertex element lacks x/y/z properties")

    if fmt == "ascii":
        parsed = _read_ascii_elements(data, offset, elements, path)
    else:
        parsed = _read_binary_elements(data, offset, elements, path)

    verts = parsed["vertex"]
    binary = fmt != "ascii"
    positions = np.stack([_column(verts, c, binary) for c in ("x", "y", "z")], axis=1)

    colors = None
    if {"red", "green", "blue"} <= vprops:
        rgb = np.stack([_column(verts, c, binary) for c in ("red", "green", "blue")], axis=1)
        colors = np.clip(rgb / 255.0, 0.0, 1.0)

    normals = None
    if {"nx", "ny", "nz"} <= vprops:
        normals = np.stack([_column(verts, c, binary) for c in ("nx", "ny", "nz")], axis=1)
        norms = np.linalg.norm(normals, axis=1)
        nz = norms > 0
        normals[nz] /= norms[nz, None]  # renormalize against quantization drift

    faces = np.empty((0, 3), dtype=np.int64)
    if "face" in parsed:
        rows = parsed["face"]
        key = next(iter(rows[0])) if rows else None
        idx = []
        for i, row in enumerate(rows):
            vals = row[key]
            if len(vals) != 3:
                raise PlyError(f"{path}: face {i} has {len(vals)} vertices; only triangles are supported")
            idx.append(vals)
        if idx:
            faces = np.asarray(idx, dtype=np.int64)
            bad = np.flatnonzero((faces < 0).any(axis=1) | (faces >= len(positions)).any(axis=1))
            if bad.size:
                raise PlyError(
                    f"{path}: face {bad[0]} references vertex "
                    f"{faces[bad[0]].max()} but the mesh has {len(positions)} vertices"
                )

    return TriMesh(positions=positions, faces=faces, colors=colors, normals=normals)


def save_ply(mesh: TriMesh, path, binary: bool = True) -> None:
    """Write a mesh as PLY: double positions, 8-bit RGB, optional normals.

    Binary files are little-endian. Positions are stored as doubles so that
    save/load round-trips them exactly; colors quantize to 1/255.
    """
    path = Path(path)
    has_normals = mesh.normals is not None
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {mesh.num_vertices}")
    header += ["property double x", "property double y", "property double z"]
    if has_normals:
        header += ["property double nx", "property double ny", "property double nz"]
    header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append(f"element face {mesh.num_faces}")
    header.append("property list uchar int vertex_indices")
    header.append("end_header")

    rgb = np.clip(np.rint(mesh.colors * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
            if has_normals:
                fields += [("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
            fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
            rec = np.empty(mesh.num_vertices, dtype=np.dtype(fields))
            for i, c in enumerate("xyz"):
                rec[c] = mesh.positions[:, i]
                if has_normals:
                    rec["n" + c] = mesh.normals[:, i]
            rec["red"], rec["green"], rec["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
            fh.write(rec.tobytes())
            if mesh.num_faces:
                frec = np.empty(mesh.num_faces, dtype=np.dtype([("n", "u1"), ("v", "<i4", (3,))]))
                frec["n"] = 3
                frec["v"] = mesh.faces.astype(np.int32)
                fh.write(frec.tobytes())
        else:
            for i in range(mesh.num_vertices):
                parts = [repr(float(x)) for x in mesh.positions[i]]
                if has_normals:
                    parts += [repr(float(x)) for x in mesh.normals[i]]
                parts += [str(int(x)) for x in rgb[i]]
                fh.write((" ".join(parts) + "\n").encode("ascii"))
            for f in mesh.faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode("ascii"))
