"""
Synthetic supervision: sphere-traced views of analytic objects and SDF point sets
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from app.config import settings
from app.exceptions import DataError
from app.models.config import DataConfig
from app.models.geometry import (
    Aabb, Camera, SimilarityTransform, apply_similarity, camera_rays, normalize, orbit_cameras,
    ray_aabb_intersect_batch, transform_box,
)
from app.models.sdf import AnalyticSdf, SdfGrid, analytic_sdf_gradient, evaluate_analytic_sdf, sample_sdf_grid

logger = logging.getLogger(__name__)

TRACE_TOLERANCE = 1e-5
TRACE_MAX_STEPS = 256
TRACE_MAX_DISTANCE = 100.0
SURFACE_TOLERANCE = 1e-4


@dataclass(frozen=True)
class GroundTruthObject:
    """An analytic object in its canonical frame, placed in the world"""

    object_id: str
    sdf: AnalyticSdf
    transform: SimilarityTransform = field(default_factory=SimilarityTransform.identity)
    bbox: Aabb = field(default_factory=Aabb.cube)

    def world_distance(self, points: np.ndarray) -> np.ndarray:
        canonical = apply_similarity(self.transform, points, inverse=True)
        return self.transform.scale * evaluate_analytic_sdf(self.sdf, canonical)


@dataclass
class GroundTruthView:
    """Images seen by one camera; ``labels`` holds the visible object index or -1"""

    camera: Camera
    color: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    labels: np.ndarray
    object_ids: Tuple[str, ...]

    def mask(self, object_id: Optional[str] = None) -> np.ndarray:
        """Pixels showing an object (any object when no id is given)"""
        if object_id is None:
            return self.labels >= 0
        if object_id not in self.object_ids:
            raise DataError(f"Unknown object id: {object_id}")
        return self.labels == self.object_ids.index(object_id)


@dataclass
class SupervisionPoints:
    points: np.ndarray
    sdf: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


def scene_distance(objects: Sequence[GroundTruthObject], points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Min world distance over objects and the index of the nearest one"""
    distances = np.stack([obj.world_distance(points) for obj in objects], axis=0)
    return distances.min(axis=0), distances.argmin(axis=0)


def scene_bounds(objects: Sequence[GroundTruthObject]) -> Aabb:
    """World box enclosing every object's placed canonical box"""
    if not objects:
        raise DataError("Ground-truth scene has no objects")
    bounds = transform_box(objects[0].transform, objects[0].bbox)
    for obj in objects[1:]:
        bounds = bounds.union(transform_box(obj.transform, obj.bbox))
    return bounds


def sphere_trace_gt(objects: Sequence[GroundTruthObject], camera: Camera, shading: str = "lambert",
                    light=(0.3, 0.8, -0.5), ambient: float = 0.2, background=(0.5, 0.5, 0.5)) -> GroundTruthView:
    """Sphere-trace analytic objects into color, depth, normal and label images

    Pixels that do not converge to |s| < 1e-5 within 256 steps are treated as
    background.
    """
    if not objects:
        raise DataError("Ground-truth scene has no objects")
    if shading not in ("flat", "lambert"):
        raise DataError(f"Unknown shading mode: {shading}")
    origins, directions = camera_rays(camera)
    total = len(origins)

    t, _, active = ray_aabb_intersect_batch(origins, directions, scene_bounds(objects))
    t = np.where(active, t, 0.0)
    hit = np.zeros(total, dtype=bool)

    for _ in range(TRACE_MAX_STEPS):
        rows = np.flatnonzero(active)
        if not len(rows):
            break
        distance, _ = scene_distance(objects, origins[rows] + t[rows, None] * directions[rows])
        converged = np.abs(distance) < TRACE_TOLERANCE
        hit[rows[converged]] = True
        moving = rows[~converged]
        t[moving] += distance[~converged]
        escaped = t[rows] > TRACE_MAX_DISTANCE
        active[rows[converged | escaped]] = False
    if np.any(active):
        logger.debug(f"{int(active.sum())} pixels did not converge and are marked invalid")

    labels = np.full(total, -1, dtype=np.int64)
    depth = np.zeros(total)
    normal = np.zeros((total, 3))
    color = np.broadcast_to(np.asarray(background, dtype=np.float64), (total, 3)).copy()
    rows = np.flatnonzero(hit)
    if len(rows):
        points = origins[rows] + t[rows, None] * directions[rows]
        _, nearest = scene_distance(objects, points)
        labels[rows] = nearest
        depth[rows] = t[rows]
        light_dir = normalize(np.asarray(light, dtype=np.float64))
        for index, obj in enumerate(objects):
            mine = nearest == index
            if not np.any(mine):
                continue
            grad = _world_gradient(obj, points[mine])
            n = normalize(grad)
            normal[rows[mine]] = n
            albedo = obj.sdf.color(apply_similarity(obj.transform, points[mine], inverse=True))
            if shading == "flat":
                color[rows[mine]] = albedo
            else:
                lambert = np.maximum(0.0, n @ light_dir)[:, None]
                color[rows[mine]] = np.clip(albedo * lambert + ambient, 0.0, 1.0)

    shape = (camera.height, camera.width)
    return GroundTruthView(
        camera=camera, color=color.reshape(shape + (3,)), depth=depth.reshape(shape),
        normal=normal.reshape(shape + (3,)), labels=labels.reshape(shape),
        object_ids=tuple(obj.object_id for obj in objects),
    )


def generate_views(objects: Sequence[GroundTruthObject], data: DataConfig,
                   background=(0.5, 0.5, 0.5)) -> List[GroundTruthView]:
    """Sphere-trace a camera ring orbiting the center of the scene bounds"""
    cameras = orbit_cameras(
        data.views, scene_bounds(objects).center, data.radius, data.elevation, data.width, data.height, data.fov,
    )
    views = [
        sphere_trace_gt(objects, camera, data.shading, data.light, data.ambient, background)
        for camera in tqdm(cameras, desc="gen-data", disable=not settings.PROGRESS, leave=False)
    ]
    logger.info(f"Generated {len(views)} views of {[obj.object_id for obj in objects]}")
    return views


def _world_gradient(obj: GroundTruthObject, points: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    grad = np.empty_like(points)
    for axis in range(3):
        offset = np.zeros(3)
        offset[axis] = eps
        grad[:, axis] = (obj.world_distance(points + offset) - obj.world_distance(points - offset)) / (2 * eps)
    return grad


def project_to_surface(sdf: AnalyticSdf, points: np.ndarray, iterations: int = 8) -> np.ndarray:
    """Newton-style steps p <- p - s * grad / |grad|^2"""
    for _ in range(iterations):
        values = evaluate_analytic_sdf(sdf, points)
        grad = analytic_sdf_gradient(sdf, points)
        norm2 = np.sum(grad * grad, axis=-1)
        step = np.where(norm2 > 1e-12, values / np.maximum(norm2, 1e-12), 0.0)
        points = points - step[:, None] * grad
    return points


def sample_surface(sdf: AnalyticSdf, bbox: Aabb, count: int, rng: np.random.Generator,
                   max_rounds: int = 20) -> np.ndarray:
    """Points on the zero level set inside a box"""
    found = []
    total = 0
    for _ in range(max_rounds):
        if total >= count:
            break
        candidates = rng.uniform(bbox.min, bbox.max, size=(2 * count, 3))
        projected = project_to_surface(sdf, candidates)
        keep = (np.abs(evaluate_analytic_sdf(sdf, projected)) < SURFACE_TOLERANCE) & bbox.contains(projected)
        found.append(projected[keep])
        total += int(keep.sum())
    if total < count:
        raise DataError("Analytic SDF has no reachable surface inside its bounding box")
    return np.concatenate(found, axis=0)[:count]


def sample_supervision_points(grid: SdfGrid, sdf: AnalyticSdf, n_uniform: int, n_near: int, band: float = 0.05,
                              rng: Optional[np.random.Generator] = None, source: str = "analytic") -> SupervisionPoints:
    """Uniform points in the grid box plus Gaussian-jittered surface points, with true SDF values

    Near-surface points leaving the box are clamped back onto it.
    """
    if n_uniform < 0 or n_near < 0:
        raise DataError("Point counts must be non-negative")
    rng = rng or np.random.default_rng(0)
    bbox = grid.bbox
    parts = [rng.uniform(bbox.min, bbox.max, size=(n_uniform, 3))]
    if n_near:
        surface = sample_surface(sdf, bbox, n_near, rng)
        parts.append(bbox.clamp(surface + rng.normal(0.0, band, size=surface.shape)))
    points = np.concatenate(parts, axis=0) if parts else np.zeros((0, 3))
    if not len(points):
        return SupervisionPoints(np.zeros((0, 3)), np.zeros(0))
    if source == "grid":
        values = sample_sdf_grid(grid, points)
    elif source == "analytic":
        values = evaluate_analytic_sdf(sdf, points)
    else:
        raise DataError(f"Unknown SDF source: {source}")
    return SupervisionPoints(points, np.asarray(values, dtype=np.float64))
