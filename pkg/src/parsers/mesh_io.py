"""
Mesh Parser - ASCII OBJ and ASCII / binary little-endian PLY
"""
from pathlib import Path
from typing import List, Literal, Optional, Tuple
import logging

import numpy as np

from src.exceptions import FormatError, MissingInputError
from src.models import TriMesh
from src.services.mesh_ops import validate_mesh

logger = logging.getLogger(__name__)

MeshFormat = Literal["obj", "ply"]

PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _infer_format(path: Path, format: Optional[str]) -> MeshFormat:
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in ("obj", "ply"):
        raise FormatError(f"unsupported mesh format '{fmt}' (expected obj or ply)", path=path)
    return fmt  # type: ignore[return-value]


def load_mesh(path: str | Path, format: Optional[MeshFormat] = None) -> TriMesh:
    """Load and validate a mesh

    Args:
        path: File path
        format: "obj" or "ply" (defaults to the file extension)

    Returns:
        Validated TriMesh with vertex order preserved from the file

    Raises:
        MissingInputError: file does not exist
        FormatError: parse failure, with line number or byte offset
        MeshValidationError: invariant violation, listing offending faces
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError(path, "mesh file")
    fmt = _infer_format(path, format)
    mesh = _load_obj(path) if fmt == "obj" else _load_ply(path)
    logger.debug(f"Loaded {path.name}: {mesh.num_vertices} vertices, {mesh.num_faces} faces")
    return validate_mesh(mesh)


def save_mesh(
    mesh: TriMesh,
    path: str | Path,
    format: Optional[MeshFormat] = None,
    binary: bool = True,
) -> None:
    """Write a mesh as OBJ or PLY

    Args:
        mesh: Mesh to write
        path: Destination
        format: "obj" or "ply" (defaults to the file extension)
        binary: PLY only - binary_little_endian (True) or ascii (False)
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "obj":
        _save_obj(mesh, path)
    else:
        _save_ply(mesh, path, binary)


# ============================================================================
# OBJ
# ============================================================================

def _load_obj(path: Path) -> TriMesh:
    positions: List[Tuple[float, float, float]] = []
    colors: List[Tuple[float, float, float]] = []
    faces: List[Tuple[int, int, int]] = []

    with open(path, "r", encoding="utf-8", errors="replace") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *fields = line.split()
            if tag == "v":
                if len(fields) not in (3, 6):
                    raise FormatError(f"vertex record needs 3 (or 6 with color) numbers, got {len(fields)}", path, line=line_no)
                try:
                    values = [float(x) for x in fields]
                except ValueError:
                    raise FormatError(f"malformed vertex record '{line}'", path, line=line_no) from None
                positions.append(tuple(values[:3]))
                if len(values) == 6:
                    colors.append(tuple(values[3:]))
            elif tag == "f":
                if len(fields) < 3:
                    raise FormatError(f"face record needs at least 3 vertices, got {len(fields)}", path, line=line_no)
                try:
                    idx = [int(token.split("/", 1)[0]) for token in fields]
                except ValueError:
                    raise FormatError(f"malformed face record '{line}'", path, line=line_no) from None
                resolved = []
                for i in idx:
                    if i == 0:
                        raise FormatError("OBJ indices are 1-based; found 0", path, line=line_no)
                    # negative indices are relative to the vertices read so far
                    resolved.append(i - 1 if i > 0 else len(positions) + i)
                for k in range(1, len(resolved) - 1):
                    faces.append((resolved[0], resolved[k], resolved[k + 1]))
            # vt / vn / g / o / s / usemtl / mtllib are ignored

    if colors and len(colors) != len(positions):
        raise FormatError("vertex colors present on some but not all vertices", path)

    return TriMesh(
        positions=np.array(positions, dtype=np.float64).reshape(-1, 3),
        faces=np.array(faces, dtype=np.int64).reshape(-1, 3),
        colors=np.array(colors, dtype=np.float64) if colors else None,
    )


def _save_obj(mesh: TriMesh, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        if mesh.colors is not None:
            for p, c in zip(mesh.positions, mesh.colors):
                f.write(f"v {p[0]!r} {p[1]!r} {p[2]!r} {c[0]!r} {c[1]!r} {c[2]!r}\n")
        else:
            for p in mesh.positions:
                f.write(f"v {p[0]!r} {p[1]!r} {p[2]!r}\n")
        for face in mesh.faces + 1:
            f.write(f"f {face[0]} {face[1]} {face[2]}\n")


# ============================================================================
# PLY
# ============================================================================

class _PlyElement:
    def __init__(self, name: str, count: int):
        self.name = name
        self.count = count
        self.properties: List[Tuple[str, str, Optional[str]]] = []  # (name, dtype, list count dtype)


def _parse_ply_header(data: bytes, path: Path) -> Tuple[str, List[_PlyElement], int]:
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError("missing 'ply' magic or 'end_header'", path, offset=0)
    newline = data.find(b"\n", end)
    body_offset = len(data) if newline < 0 else newline + 1
    header_lines = data[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements: List[_PlyElement] = []
    for line_no, line in enumerate(header_lines, start=1):
        tokens = line.split()
        if not tokens or tokens[0] in ("ply", "comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) < 3 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise FormatError(f"unsupported PLY format '{' '.join(tokens[1:])}'", path, line=line_no)
            fmt = tokens[1]
        elif tokens[0] == "element":
            try:
                elements.append(_PlyElement(tokens[1], int(tokens[2])))
            except (IndexError, ValueError):
                raise FormatError(f"malformed element line '{line}'", path, line=line_no) from None
        elif tokens[0] == "property":
            if not elements:
                raise FormatError("property before any element", path, line=line_no)
            try:
                if tokens[1] == "list":
                    elements[-1].properties.append((tokens[4], PLY_TYPES[tokens[3]], PLY_TYPES[tokens[2]]))
                else:
                    elements[-1].properties.append((tokens[2], PLY_TYPES[tokens[1]], None))
            except (IndexError, KeyError):
                raise FormatError(f"malformed property line '{line}'", path, line=line_no) from None
        else:
            raise FormatError(f"unexpected header keyword '{tokens[0]}'", path, line=line_no)

    if fmt is None:
        raise FormatError("PLY header has no format line", path)
    return fmt, elements, body_offset


def _load_ply(path: Path) -> TriMesh:
    data = path.read_bytes()
    fmt, elements, offset = _parse_ply_header(data, path)
    vertex_el = next((e for e in elements if e.name == "vertex"), None)
    if vertex_el is None:
        raise FormatError("PLY has no vertex element", path)
    names = [p[0] for p in vertex_el.properties]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise FormatError(f"vertex element lacks property '{axis}'", path)

    if fmt == "ascii":
        tables = _read_ply_ascii(data[offset:].decode("ascii", errors="replace"), elements, path, header_lines=data[:offset].count(b"\n"))
    else:
        tables = _read_ply_binary(data, offset, elements, path)

    vertices = tables["vertex"]
    positions = np.stack([np.asarray(vertices["x"], np.float64), np.asarray(vertices["y"], np.float64), np.asarray(vertices["z"], np.float64)], axis=1)
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([np.asarray(vertices[c], np.float64) for c in ("red", "green", "blue")], axis=1) / 255.0

    faces = np.zeros((0, 3), dtype=np.int64)
    if "face" in tables:
        polys = tables["face"]
        if isinstance(polys, np.ndarray):
            return TriMesh(positions=positions, faces=polys, colors=colors)
        tris: List[np.ndarray] = []
        for poly in polys:
            poly = np.asarray(poly, dtype=np.int64)
            for k in range(1, len(poly) - 1):
                tris.append(poly[[0, k, k + 1]])
        if tris:
            faces = np.stack(tris)
    return TriMesh(positions=positions, faces=faces, colors=colors)


def _read_ply_ascii(text: str, elements: List[_PlyElement], path: Path, header_lines: int) -> dict:
    lines = text.splitlines()
    cursor = 0
    tables: dict = {}
    for el in elements:
        is_face = el.name == "face"
        columns = {name: [] for name, _, _ in el.properties}
        polys = []
        for _ in range(el.count):
            while cursor < len(lines) and not lines[cursor].strip():
                cursor += 1
            if cursor >= len(lines):
                raise FormatError(f"unexpected end of file in element '{el.name}'", path, line=header_lines + cursor + 1)
            tokens = lines[cursor].split()
            line_no = header_lines + cursor + 1
            cursor += 1
            pos = 0
            try:
                for name, dtype, count_type in el.properties:
                    if count_type is not None:
                        n = int(tokens[pos])
                        values = [int(float(t)) for t in tokens[pos + 1: pos + 1 + n]]
                        if len(values) != n:
                            raise IndexError
                        pos += 1 + n
                        if is_face and name in ("vertex_indices", "vertex_index"):
                            polys.append(values)
                    else:
                        columns[name].append(float(tokens[pos]))
                        pos += 1
            except (IndexError, ValueError):
                raise FormatError(f"malformed '{el.name}' record", path, line=line_no) from None
        tables[el.name] = polys if is_face else columns
    return tables


def _read_ply_binary(data: bytes, offset: int, elements: List[_PlyElement], path: Path) -> dict:
    tables: dict = {}
    for el in elements:
        has_list = any(count is not None for _, _, count in el.properties)
        if not has_list:
            dtype = np.dtype([(name, "<" + t) for name, t, _ in el.properties])
            nbytes = dtype.itemsize * el.count
            if offset + nbytes > len(data):
                raise FormatError(f"truncated '{el.name}' block (need {nbytes} bytes)", path, offset=len(data))
            table = np.frombuffer(data, dtype=dtype, count=el.count, offset=offset)
            offset += nbytes
            tables[el.name] = {name: table[name] for name in dtype.names}
            continue

        fast = _read_triangle_block(data, offset, el)
        if fast is not None:
            tables[el.name], offset = fast
            continue

        polys = []
        for _ in range(el.count):
            for name, t, count_type in el.properties:
                if count_type is None:
                    size = np.dtype(t).itemsize
                    if offset + size > len(data):
                        raise FormatError(f"truncated '{el.name}' record", path, offset=offset)
                    offset += size
                    continue
                count_dt = np.dtype("<" + count_type)
                if offset + count_dt.itemsize > len(data):
                    raise FormatError(f"truncated '{el.name}' list count", path, offset=offset)
                n = int(np.frombuffer(data, dtype=count_dt, count=1, offset=offset)[0])
                offset += count_dt.itemsize
                item_dt = np.dtype("<" + t)
                if offset + n * item_dt.itemsize > len(data):
                    raise FormatError(f"truncated '{el.name}' list", path, offset=offset)
                values = np.frombuffer(data, dtype=item_dt, count=n, offset=offset)
                offset += n * item_dt.itemsize
                if name in ("vertex_indices", "vertex_index"):
                    polys.append(values)
        tables[el.name] = polys
    return tables


def _read_triangle_block(data: bytes, offset: int, el: _PlyElement):
    """Vectorized read when every record is a single 3-index list; None otherwise"""
    if len(el.properties) != 1:
        return None
    name, t, count_type = el.properties[0]
    if count_type is None or name not in ("vertex_indices", "vertex_index"):
        return None
    dtype = np.dtype([("n", "<" + count_type), ("idx", "<" + t, (3,))])
    nbytes = dtype.itemsize * el.count
    if offset + nbytes > len(data):
        return None
    block = np.frombuffer(data, dtype=dtype, count=el.count, offset=offset)
    if not np.all(block["n"] == 3):
        return None
    return block["idx"].astype(np.int64), offset + nbytes


def _save_ply(mesh: TriMesh, path: Path, binary: bool) -> None:
    has_color = mesh.colors is not None
    header = [
        "ply",
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
        f"element vertex {mesh.num_vertices}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if has_color:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header += [f"element face {mesh.num_faces}", "property list uchar int vertex_indices", "end_header"]
    header_bytes = ("\n".join(header) + "\n").encode("ascii")

    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if has_color:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    vertices = np.zeros(mesh.num_vertices, dtype=fields)
    for axis, name in enumerate("xyz"):
        vertices[name] = mesh.positions[:, axis]
    if has_color:
        rgb = np.clip(np.rint(mesh.colors * 255.0), 0, 255).astype(np.uint8)
        for axis, name in enumerate(("red", "green", "blue")):
            vertices[name] = rgb[:, axis]

    faces = np.zeros(mesh.num_faces, dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    faces["n"] = 3
    faces["idx"] = mesh.faces

    with open(path, "wb") as f:
        f.write(header_bytes)
        if binary:
            f.write(vertices.tobytes())
            f.write(faces.tobytes())
        else:
            for v in vertices:
                f.write((" ".join(repr(float(v[n])) if n in "xyz" else str(int(v[n])) for n in vertices.dtype.names) + "\n").encode("ascii"))
            for face in mesh.faces:
                f.write(f"3 {face[0]} {face[1]} {face[2]}\n".encode("ascii"))
