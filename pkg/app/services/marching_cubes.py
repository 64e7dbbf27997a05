"""
Marching-cubes extraction of an SDF zero-level set

The evaluator is sampled on a regular lattice of ``resolution`` points per
axis spanning the box. Every cut lattice edge yields exactly one vertex, so
neighbouring cells share vertices and sign-consistent fields give closed
meshes.
"""

import logging
from typing import Callable, Optional

import numpy as np

from app.exceptions import DataError
from app.models.geometry import Aabb
from app.models.mesh import TriangleMesh
from app.services.field_model import finite_difference_normals
from app.services.mc_tables import CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE

logger = logging.getLogger(__name__)

SdfEvaluator = Callable[[np.ndarray], np.ndarray]

ISO_NUDGE = 1e-9
MIN_FACE_AREA = 1e-12
EVAL_CHUNK = 65536


def evaluate_lattice(evaluator: SdfEvaluator, bbox: Aabb, resolution: int) -> np.ndarray:
    """SDF values at the (resolution,) * 3 lattice points of the box, indexed [i, j, k]"""
    axes = [np.linspace(bbox.min[a], bbox.max[a], resolution) for a in range(3)]
    points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    values = np.concatenate([
        np.asarray(evaluator(points[start:start + EVAL_CHUNK]), dtype=np.float64).reshape(-1)
        for start in range(0, len(points), EVAL_CHUNK)
    ])
    return values.reshape((resolution,) * 3)


def cube_cases(inside: np.ndarray) -> np.ndarray:
    """8-bit case index per cell; bit c is set when corner c is inside"""
    n = inside.shape[0] - 1
    cases = np.zeros((n, n, n), dtype=np.int64)
    for corner, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        cases |= inside[dx:dx + n, dy:dy + n, dz:dz + n].astype(np.int64) << corner
    return cases


def marching_cubes(evaluator: SdfEvaluator, bbox: Aabb, resolution: int = 64, iso: float = 0.0,
                   normal_eps: Optional[float] = 1e-3) -> TriangleMesh:
    """
    Triangulate the ``iso`` level set of an SDF inside a box

    Args:
        evaluator: Batched SDF, (N, 3) points to (N,) values
        bbox: Region to polygonize
        resolution: Lattice points per axis (at least 2)
        iso: Level to extract
        normal_eps: Central-difference step for vertex normals; None skips normals

    Returns:
        Mesh with faces wound so their normals follow the SDF gradient
    """
    if resolution < 2:
        raise DataError(f"Marching cubes needs at least 2 lattice points per axis, got {resolution}")
    values = evaluate_lattice(evaluator, bbox, resolution)
    if not np.all(np.isfinite(values)):
        raise DataError("SDF evaluator returned non-finite values")
    values = np.where(values == iso, iso + ISO_NUDGE, values)

    cases = cube_cases(values < iso)
    cells = np.argwhere((cases != 0) & (cases != 255))
    if not len(cells):
        logger.info("Field has no crossing inside the box; mesh is empty")
        return TriangleMesh.empty()

    triangles = TRI_TABLE[cases[tuple(cells.T)], :15].reshape(-1, 5, 3)
    owner, slot = np.nonzero(triangles[:, :, 0] >= 0)
    edges = triangles[owner, slot]

    n = resolution
    corner_a = cells[owner][:, None, :] + CORNER_OFFSETS[EDGE_CORNERS[edges, 0]]
    corner_b = cells[owner][:, None, :] + CORNER_OFFSETS[EDGE_CORNERS[edges, 1]]
    start = np.minimum(corner_a, corner_b)
    axis = np.argmax(np.abs(corner_b - corner_a), axis=-1)
    keys = ((axis * n + start[..., 0]) * n + start[..., 1]) * n + start[..., 2]

    _, first, inverse = np.unique(keys.reshape(-1), return_index=True, return_inverse=True)
    faces = inverse.reshape(-1, 3)
    a = corner_a.reshape(-1, 3)[first]
    b = corner_b.reshape(-1, 3)[first]
    value_a = values[tuple(a.T)]
    value_b = values[tuple(b.T)]
    weight = (iso - value_a) / (value_b - value_a)
    spacing = (bbox.max - bbox.min) / (n - 1)
    vertices = bbox.min + (a + weight[:, None] * (b - a)) * spacing

    mesh = _drop_degenerate(TriangleMesh(vertices, faces))
    if mesh.is_empty:
        return mesh
    gradient_normals, _ = finite_difference_normals(evaluator, mesh.vertices, normal_eps or 1e-3)
    faces = _orient_faces(mesh, gradient_normals)
    logger.debug(f"Extracted {len(mesh.vertices)} vertices and {len(faces)} faces from {len(cells)} cells")
    return TriangleMesh(mesh.vertices, faces, gradient_normals if normal_eps else None)


def _drop_degenerate(mesh: TriangleMesh) -> TriangleMesh:
    """Remove zero-area faces and the vertices only they used"""
    keep = mesh.face_areas() > MIN_FACE_AREA
    if np.all(keep):
        return mesh
    faces = mesh.faces[keep]
    used, remapped = np.unique(faces, return_inverse=True)
    logger.debug(f"Dropped {int((~keep).sum())} zero-area faces")
    return TriangleMesh(mesh.vertices[used], remapped.reshape(-1, 3))


def _orient_faces(mesh: TriangleMesh, vertex_normals: np.ndarray) -> np.ndarray:
    """Flip faces whose geometric normal opposes the mean gradient of their vertices"""
    a, b, c = (mesh.vertices[mesh.faces[:, i]] for i in range(3))
    geometric = np.cross(b - a, c - a)
    gradient = vertex_normals[mesh.faces].sum(axis=1)
    flip = np.sum(geometric * gradient, axis=-1) < 0
    faces = mesh.faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces
