"""
Mesh and point-cloud files: ASCII OBJ and binary little-endian PLY
"""

import logging
import os
from typing import List, Optional, Tuple, Union

import numpy as np

from app.exceptions import DataError
from app.models.mesh import PointCloud, TriangleMesh

logger = logging.getLogger(__name__)

PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}


def _ensure_dir(path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


# --- OBJ ---------------------------------------------------------------------------

def write_obj(path: str, mesh: TriangleMesh) -> None:
    """v / vn / f records with 9 significant digits and 1-based indices"""
    _ensure_dir(path)
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    if mesh.normals is not None:
        lines += [f"vn {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.normals]
        lines += [f"f {a}//{a} {b}//{b} {c}//{c}" for a, b, c in mesh.faces + 1]
    else:
        lines += [f"f {a} {b} {c}" for a, b, c in mesh.faces + 1]
    with open(path, "w", encoding="ascii") as handle:
        handle.write("\n".join(lines) + "\n")
    logger.debug(f"Wrote OBJ {path}: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces")


def _obj_index(token: str, count: int, line_no: int) -> int:
    try:
        index = int(token)
    except ValueError:
        raise DataError(f"OBJ line {line_no}: bad index {token!r}")
    index = index - 1 if index > 0 else count + index
    if not 0 <= index < count:
        raise DataError(f"OBJ line {line_no}: index {token} out of range")
    return index


def read_obj(path: str) -> TriangleMesh:
    """Read v, vn and f records; polygons are fan-triangulated

    Normals are kept only when every face corner pairs a vertex with the
    normal of the same index.
    """
    if not os.path.exists(path):
        raise DataError(f"Mesh not found: {path}")
    vertices: List[List[float]] = []
    normals: List[List[float]] = []
    faces: List[Tuple[int, int, int]] = []
    paired = True
    with open(path, "r", encoding="utf-8", errors="replace") as handle:
        for line_no, line in enumerate(handle, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    vertices.append([float(v) for v in parts[1:4]])
                elif parts[0] == "vn":
                    normals.append([float(v) for v in parts[1:4]])
                elif parts[0] == "f":
                    corners = []
                    for token in parts[1:]:
                        fields = token.split("/")
                        v = _obj_index(fields[0], len(vertices), line_no)
                        if len(fields) < 3 or not fields[2] or _obj_index(fields[2], len(normals), line_no) != v:
                            paired = False
                        corners.append(v)
                    if len(corners) < 3:
                        raise DataError(f"OBJ line {line_no}: face with fewer than 3 vertices")
                    faces.extend((corners[0], corners[i], corners[i + 1]) for i in range(1, len(corners) - 1))
            except ValueError:
                raise DataError(f"OBJ line {line_no}: malformed record")
    if any(len(v) != 3 for v in vertices + normals):
        raise DataError(f"{path} has a vertex or normal record without 3 components")
    vertex_normals = None
    if normals and paired and len(normals) == len(vertices):
        vertex_normals = np.asarray(normals)
    return TriangleMesh(
        np.asarray(vertices, dtype=np.float64).reshape(-1, 3),
        np.asarray(faces, dtype=np.int64).reshape(-1, 3),
        vertex_normals,
    )


# --- PLY ---------------------------------------------------------------------------

def write_ply(path: str, geometry: Union[TriangleMesh, PointCloud]) -> None:
    """Binary little-endian PLY with float32 x,y,z[,nx,ny,nz] and optional triangle faces"""
    _ensure_dir(path)
    if isinstance(geometry, TriangleMesh):
        points, normals, faces = geometry.vertices, geometry.normals, geometry.faces
    else:
        points, normals, faces = geometry.points, geometry.normals, None

    names = ["x", "y", "z"] + (["nx", "ny", "nz"] if normals is not None else [])
    vertex = np.empty(len(points), dtype=[(name, "<f4") for name in names])
    for axis, name in enumerate("xyz"):
        vertex[name] = points[:, axis]
    if normals is not None:
        for axis, name in enumerate(("nx", "ny", "nz")):
            vertex[name] = normals[:, axis]

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(points)}"]
    header += [f"property float {name}" for name in names]
    if faces is not None:
        header += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    header.append("end_header")

    with open(path, "wb") as handle:
        handle.write(("\n".join(header) + "\n").encode("ascii"))
        handle.write(vertex.tobytes())
        if faces is not None:
            face = np.empty(len(faces), dtype=[("count", "u1"), ("indices", "<i4", (3,))])
            face["count"] = 3
            face["indices"] = faces
            handle.write(face.tobytes())
    logger.debug(f"Wrote PLY {path}: {len(points)} vertices")


def _parse_ply_header(data: bytes, path: str):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise DataError(f"{path} is not a PLY file")
    newline = data.find(b"\n", end)
    if newline < 0:
        raise DataError(f"Truncated PLY header in {path}")
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    elements = []
    for line in lines[1:]:
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] != "binary_little_endian":
                raise DataError(f"{path}: only binary_little_endian PLY is supported, got {line!r}")
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise DataError(f"{path}: malformed element line {line!r}")
            elements.append({"name": parts[1], "count": int(parts[2]), "properties": []})
        elif parts[0] == "property":
            if not elements:
                raise DataError(f"{path}: property before any element")
            if len(parts) < 3 or (parts[1] == "list" and len(parts) != 5):
                raise DataError(f"{path}: malformed property line {line!r}")
            elements[-1]["properties"].append(parts[1:])
    return elements, newline + 1


def read_ply(path: str) -> TriangleMesh:
    """Read a binary PLY; point clouds come back as meshes without faces"""
    if not os.path.exists(path):
        raise DataError(f"Mesh not found: {path}")
    with open(path, "rb") as handle:
        data = handle.read()
    elements, offset = _parse_ply_header(data, path)

    vertices = np.zeros((0, 3))
    normals: Optional[np.ndarray] = None
    faces = np.zeros((0, 3), dtype=np.int64)
    for element in elements:
        props = element["properties"]
        if element["name"] == "face":
            if len(props) != 1 or props[0][0] != "list":
                raise DataError(f"{path}: face element must be a single list property")
            if props[0][1] not in PLY_TYPES or props[0][2] not in PLY_TYPES:
                raise DataError(f"{path}: unsupported face list types {props[0][1:]}")
            count_type, index_type = PLY_TYPES[props[0][1]], PLY_TYPES[props[0][2]]
            dtype = np.dtype([("count", count_type), ("indices", index_type, (3,))])
        else:
            if any(p[0] == "list" for p in props):
                raise DataError(f"{path}: list properties are only supported on faces")
            try:
                dtype = np.dtype([(p[1], PLY_TYPES[p[0]]) for p in props])
            except KeyError as e:
                raise DataError(f"{path}: unsupported PLY property type {e}")
        size = dtype.itemsize * element["count"]
        if offset + size > len(data):
            raise DataError(f"Truncated PLY payload in {path}")
        records = np.frombuffer(data, dtype=dtype, count=element["count"], offset=offset)
        offset += size

        if element["name"] == "vertex":
            vertices = np.stack([records[a].astype(np.float64) for a in "xyz"], axis=-1)
            if all(n in records.dtype.names for n in ("nx", "ny", "nz")):
                normals = np.stack([records[n].astype(np.float64) for n in ("nx", "ny", "nz")], axis=-1)
        elif element["name"] == "face":
            if np.any(records["count"] != 3):
                raise DataError(f"{path}: only triangle faces are supported")
            faces = records["indices"].astype(np.int64)
    return TriangleMesh(vertices, faces, normals)


def read_point_cloud(path: str) -> PointCloud:
    mesh = read_ply(path) if path.lower().endswith(".ply") else read_obj(path)
    normals = mesh.normals
    if normals is not None:
        normals = normals / np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-12)
    return PointCloud(mesh.vertices, normals)


# --- by extension ------------------------------------------------------------------

def save_mesh(path: str, mesh: TriangleMesh) -> None:
    extension = os.path.splitext(path)[1].lower()
    if extension == ".obj":
        write_obj(path, mesh)
    elif extension == ".ply":
        write_ply(path, mesh)
    else:
        raise DataError(f"Unsupported mesh format: {extension or path}")


def load_mesh(path: str) -> TriangleMesh:
    extension = os.path.splitext(path)[1].lower()
    if extension == ".obj":
        return read_obj(path)
    if extension == ".ply":
        return read_ply(path)
    raise DataError(f"Unsupported mesh format: {extension or path}")
