"""
Analytic signed distance primitives and the voxelized SDF grid

Sign convention everywhere: positive outside, negative inside.
"""

from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np

from app.exceptions import DataError
from app.models.geometry import Aabb, as_vec3


@dataclass(frozen=True)
class Sphere:
    """Exact distance"""

    center: np.ndarray
    radius: float

    def distance(self, p: np.ndarray) -> np.ndarray:
        return np.linalg.norm(p - self.center, axis=-1) - self.radius


@dataclass(frozen=True)
class Box:
    """Exact distance inside and outside"""

    center: np.ndarray
    half_extents: np.ndarray

    def distance(self, p: np.ndarray) -> np.ndarray:
        q = np.abs(p - self.center) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside


@dataclass(frozen=True)
class Torus:
    """Exact distance; the ring lies in the xz-plane around the y axis"""

    center: np.ndarray
    major_radius: float
    minor_radius: float

    def distance(self, p: np.ndarray) -> np.ndarray:
        q = p - self.center
        ring = np.sqrt(q[..., 0] ** 2 + q[..., 2] ** 2) - self.major_radius
        return np.sqrt(ring ** 2 + q[..., 1] ** 2) - self.minor_radius


@dataclass(frozen=True)
class Plane:
    """Exact distance to the plane n.p = offset, positive on the normal side"""

    normal: np.ndarray
    offset: float = 0.0

    def distance(self, p: np.ndarray) -> np.ndarray:
        return p @ self.normal - self.offset


@dataclass(frozen=True)
class Albedo:
    """Surface color function: constant, or alternating stripes along an axis"""

    kind: str = "constant"
    color: Tuple[float, float, float] = (0.8, 0.8, 0.8)
    color2: Tuple[float, float, float] = (0.2, 0.2, 0.2)
    axis: int = 1
    period: float = 0.25

    def __post_init__(self):
        if self.kind not in ("constant", "stripe"):
            raise DataError(f"Unknown albedo kind: {self.kind}")

    def evaluate(self, p: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(p)
        base = np.broadcast_to(np.asarray(self.color, dtype=np.float64), p.shape).copy()
        if self.kind == "stripe":
            band = np.floor(p[:, self.axis] / self.period).astype(np.int64) % 2 == 1
            base[band] = np.asarray(self.color2, dtype=np.float64)
        return base


Primitive = Union[Sphere, Box, Torus, Plane, "UnionSdf"]


@dataclass(frozen=True)
class UnionSdf:
    """Min of member SDFs: exact outside, a lower bound on |s| inside"""

    members: Tuple["AnalyticSdf", ...]

    def distance(self, p: np.ndarray) -> np.ndarray:
        return np.min(np.stack([evaluate_analytic_sdf(m, p) for m in self.members], axis=0), axis=0)

    def nearest_member(self, p: np.ndarray) -> np.ndarray:
        return np.argmin(np.stack([evaluate_analytic_sdf(m, p) for m in self.members], axis=0), axis=0)


@dataclass(frozen=True)
class AnalyticSdf:
    """A primitive plus its albedo; the desk-scale stand-in for a CAD model"""

    primitive: Primitive
    albedo: Albedo = field(default_factory=Albedo)

    def color(self, p: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        if isinstance(self.primitive, UnionSdf):
            nearest = self.primitive.nearest_member(p)
            colors = np.zeros((len(p), 3))
            for index, member in enumerate(self.primitive.members):
                chosen = nearest == index
                if np.any(chosen):
                    colors[chosen] = member.color(p[chosen])
            return colors
        return self.albedo.evaluate(p)


def sphere(radius: float, center=(0.0, 0.0, 0.0), color=(0.8, 0.8, 0.8)) -> AnalyticSdf:
    return AnalyticSdf(Sphere(as_vec3(center), float(radius)), Albedo(color=tuple(color)))


def box(half_extents, center=(0.0, 0.0, 0.0), color=(0.8, 0.8, 0.8)) -> AnalyticSdf:
    return AnalyticSdf(Box(as_vec3(center), as_vec3(half_extents)), Albedo(color=tuple(color)))


def torus(major_radius: float, minor_radius: float, center=(0.0, 0.0, 0.0), color=(0.8, 0.8, 0.8)) -> AnalyticSdf:
    return AnalyticSdf(Torus(as_vec3(center), float(major_radius), float(minor_radius)), Albedo(color=tuple(color)))


def plane(normal, offset: float = 0.0, color=(0.8, 0.8, 0.8)) -> AnalyticSdf:
    normal = as_vec3(normal)
    return AnalyticSdf(Plane(normal / np.linalg.norm(normal), float(offset)), Albedo(color=tuple(color)))


def union(*members: AnalyticSdf) -> AnalyticSdf:
    if not members:
        raise DataError("Union needs at least one member")
    return AnalyticSdf(UnionSdf(tuple(members)))


def evaluate_analytic_sdf(sdf: AnalyticSdf, p) -> Union[float, np.ndarray]:
    """Signed distance at a point (float) or at each row of an (N, 3) array"""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != 3:
        raise DataError(f"Expected points with 3 components, got shape {p.shape}")
    values = sdf.primitive.distance(p)
    if p.ndim == 1:
        return float(values)
    return values


def analytic_sdf_gradient(sdf: AnalyticSdf, points: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of an analytic SDF at (N, 3) points"""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    grad = np.empty_like(points)
    for axis in range(3):
        offset = np.zeros(3)
        offset[axis] = eps
        grad[:, axis] = (
            evaluate_analytic_sdf(sdf, points + offset) - evaluate_analytic_sdf(sdf, points - offset)
        ) / (2.0 * eps)
    return grad


@dataclass(frozen=True)
class SdfGrid:
    """Signed distances sampled at voxel centers of a box

    ``values`` has shape (rx, ry, rz); voxel (i, j, k) has center
    bbox.min + (index + 0.5) * spacing.
    """

    bbox: Aabb
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or min(values.shape) < 1:
            raise DataError(f"SDF grid values must be a 3D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("SDF grid contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def resolution(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.values.shape)

    @property
    def spacing(self) -> np.ndarray:
        return self.bbox.extent / np.asarray(self.resolution, dtype=np.float64)

    def centers(self) -> np.ndarray:
        axes = [
            self.bbox.min[a] + (np.arange(n) + 0.5) * self.spacing[a]
            for a, n in enumerate(self.resolution)
        ]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return grid


def build_sdf_grid(sdf: AnalyticSdf, bbox: Aabb, resolution: int = 64) -> SdfGrid:
    """Voxelize a box and store the analytic SDF at each voxel center"""
    if resolution < 2:
        raise DataError(f"SDF grid resolution must be at least 2, got {resolution}")
    spacing = bbox.extent / resolution
    axes = [bbox.min[a] + (np.arange(resolution) + 0.5) * spacing[a] for a in range(3)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    values = evaluate_analytic_sdf(sdf, centers.reshape(-1, 3)).reshape(resolution, resolution, resolution)
    return SdfGrid(bbox, values)


def sample_sdf_grid(grid: SdfGrid, p) -> Union[float, np.ndarray]:
    """Trilinear interpolation of voxel-center values

    Queries outside the bbox are clamped to its boundary. Inside the half-voxel
    margin between the outermost centers and the box faces the boundary cell is
    extended linearly, so trilinear functions are reproduced everywhere in the box.
    """
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    points = grid.bbox.clamp(np.atleast_2d(p))
    res = np.asarray(grid.resolution)
    if np.any(res < 2):
        raise DataError("Trilinear sampling needs at least 2 voxels per axis")
    # continuous index space: voxel center i sits at coordinate i
    coords = (points - grid.bbox.min) / grid.spacing - 0.5
    base = np.clip(np.floor(coords).astype(np.int64), 0, res - 2)
    frac = coords - base
    upper = base + 1

    values = grid.values
    result = np.zeros(len(points))
    for dx in (0, 1):
        ix = upper[:, 0] if dx else base[:, 0]
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        for dy in (0, 1):
            iy = upper[:, 1] if dy else base[:, 1]
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            for dz in (0, 1):
                iz = upper[:, 2] if dz else base[:, 2]
                wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                result += wx * wy * wz * values[ix, iy, iz]
    if single:
        return float(result[0])
    return result
