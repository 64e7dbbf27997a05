"""
Surface sampling and scene-level mesh assembly
"""

import logging
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from app.exceptions import DataError
from app.models.geometry import SimilarityTransform, apply_similarity
from app.models.mesh import PointCloud, TriangleMesh
from app.models.scene import SceneGraph

logger = logging.getLogger(__name__)


def sample_surface_points(mesh: TriangleMesh, n: int, rng: Optional[np.random.Generator] = None) -> PointCloud:
    """
    Area-weighted uniform samples on a triangle mesh

    Args:
        mesh: Source mesh
        n: Number of points
        rng: Random generator (seed 0 when omitted)

    Returns:
        Point cloud carrying the normal of the triangle each point came from
    """
    if mesh.is_empty:
        raise DataError("Cannot sample points from an empty mesh")
    if n < 1:
        raise DataError(f"Sample count must be positive, got {n}")
    rng = rng or np.random.default_rng(0)
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise DataError("Mesh has zero surface area")

    chosen = rng.choice(len(areas), size=n, p=areas / total)
    r1, r2 = rng.random(n), rng.random(n)
    root = np.sqrt(r1)
    u, v, w = 1.0 - root, root * (1.0 - r2), root * r2
    a, b, c = (mesh.vertices[mesh.faces[chosen, i]] for i in range(3))
    points = u[:, None] * a + v[:, None] * b + w[:, None] * c
    return PointCloud(points, mesh.face_normals()[chosen])


def transform_mesh(mesh: TriangleMesh, transform: SimilarityTransform) -> TriangleMesh:
    """Map a canonical mesh into the world"""
    normals = None if mesh.normals is None else mesh.normals @ transform.rotation.T
    return TriangleMesh(apply_similarity(transform, mesh.vertices), mesh.faces, normals)


def concatenate_meshes(meshes: Sequence[TriangleMesh]) -> TriangleMesh:
    """Stack meshes into one, offsetting face indices"""
    if not meshes:
        return TriangleMesh.empty()
    offsets = np.cumsum([0] + [len(m.vertices) for m in meshes[:-1]])
    vertices = np.concatenate([m.vertices for m in meshes], axis=0)
    faces = np.concatenate([m.faces + offset for m, offset in zip(meshes, offsets)], axis=0)
    normals = None
    if all(m.normals is not None for m in meshes):
        normals = np.concatenate([m.normals for m in meshes], axis=0)
    return TriangleMesh(vertices, faces, normals)


def merge_scene_meshes(scene: SceneGraph,
                       meshes: Union[Sequence[TriangleMesh], Mapping[str, TriangleMesh]]) -> TriangleMesh:
    """Place each instance's canonical mesh in the world and concatenate them in scene order"""
    if isinstance(meshes, Mapping):
        missing = [oid for oid in scene.object_ids if oid not in meshes]
        if missing or len(meshes) != len(scene):
            raise DataError(f"Need one mesh per scene instance; missing {missing}")
        meshes = [meshes[oid] for oid in scene.object_ids]
    if len(meshes) != len(scene):
        raise DataError(f"Scene has {len(scene)} instances but {len(meshes)} meshes were given")
    placed = [transform_mesh(mesh, instance.transform) for instance, mesh in zip(scene, meshes)]
    merged = concatenate_meshes(placed)
    logger.info(f"Merged {len(placed)} object meshes into {len(merged.vertices)} vertices")
    return merged
