"""
Vector, ray, camera and transform primitives

Points and directions are plain float64 numpy arrays of shape (3,) or (N, 3).
All types are frozen and safe to share between threads.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from app.exceptions import BehindCameraError, DataError, NumericalDomainError

MIN_CAMERA_DEPTH = 1e-6


def as_vec3(value) -> np.ndarray:
    """Coerce a sequence to a finite float64 3-vector"""
    vec = np.asarray(value, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(vec)):
        raise DataError(f"Vector has non-finite components: {vec}")
    return vec


def normalize(vectors: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Normalize vectors along the last axis; zero vectors stay zero"""
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    return np.where(norms > eps, vectors / np.maximum(norms, eps), 0.0)


def rotation_about_axis(axis, degrees: float) -> np.ndarray:
    """Rodrigues rotation matrix; axis may be 'x', 'y', 'z' or a 3-vector"""
    if isinstance(axis, str):
        try:
            axis = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}[axis.lower()]
        except KeyError:
            raise DataError(f"Unknown rotation axis: {axis}")
    axis = as_vec3(axis)
    norm = np.linalg.norm(axis)
    if norm < 1e-12:
        raise NumericalDomainError("Rotation axis has zero length")
    kx, ky, kz = axis / norm
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    k = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


@dataclass(frozen=True)
class Ray:
    """Half-line origin + t * direction with a unit direction"""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        origin = as_vec3(self.origin)
        direction = as_vec3(self.direction)
        length = np.linalg.norm(direction)
        if length < 1e-12:
            raise NumericalDomainError("Ray direction has zero length")
        if abs(length - 1.0) > 1e-9:
            direction = direction / length
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return self.origin + t[..., None] * self.direction


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box with min <= max componentwise"""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo, hi = as_vec3(self.min), as_vec3(self.max)
        if np.any(lo > hi):
            raise DataError(f"Box min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def cube(cls, half: float = 1.0) -> "Aabb":
        return cls(np.full(3, -half), np.full(3, half))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return np.all((points >= self.min - tol) & (points <= self.max + tol), axis=-1)

    def clamp(self, points: np.ndarray) -> np.ndarray:
        return np.clip(points, self.min, self.max)

    def corners(self) -> np.ndarray:
        lo, hi = self.min, self.max
        return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb(np.minimum(self.min, other.min), np.maximum(self.max, other.max))


@dataclass(frozen=True)
class SimilarityTransform:
    """Canonical-to-world map p -> R (scale p) + translation"""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(rotation.T @ rotation, np.eye(3), atol=1e-9):
            raise DataError("Similarity rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > 1e-9:
            raise DataError("Similarity rotation has det != +1")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise DataError(f"Similarity scale must be positive, got {self.scale}")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", as_vec3(self.translation))
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """self after other"""
        return SimilarityTransform(
            rotation=self.rotation @ other.rotation,
            translation=self.scale * (self.rotation @ other.translation) + self.translation,
            scale=self.scale * other.scale,
        )

    def to_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.scale * self.rotation
        matrix[:3, 3] = self.translation
        return matrix


def apply_similarity(t: SimilarityTransform, p, inverse: bool = False) -> np.ndarray:
    """Forward: R (scale p) + translation; inverse: R^T (p - translation) / scale"""
    p = np.asarray(p, dtype=np.float64)
    if inverse:
        return ((p - t.translation) @ t.rotation) / t.scale
    return (t.scale * p) @ t.rotation.T + t.translation


def transform_box(t: SimilarityTransform, box: Aabb) -> Aabb:
    """World-space bounds of a transformed box"""
    corners = apply_similarity(t, box.corners())
    return Aabb(corners.min(axis=0), corners.max(axis=0))


def ray_aabb_intersect(ray: Ray, box: Aabb) -> Optional[Tuple[float, float]]:
    """Slab-method clip of a ray against a box, returning the forward span or None"""
    t_near, t_far, hit = ray_aabb_intersect_batch(ray.origin[None], ray.direction[None], box)
    if not hit[0]:
        return None
    return float(t_near[0]), float(t_far[0])


def ray_aabb_intersect_batch(origins: np.ndarray, directions: np.ndarray, box: Aabb):
    """Vectorized slab method; returns (t_near, t_far, hit) with t_near clamped at 0"""
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t0 = (box.min - origins) * inv
        t1 = (box.max - origins) * inv
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    # Axis-parallel rays: the slab is either everything or nothing
    parallel = directions == 0.0
    inside_slab = (origins >= box.min) & (origins <= box.max)
    lo = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), lo)
    hi = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), hi)
    t_near = np.maximum(lo.max(axis=-1), 0.0)
    t_far = hi.min(axis=-1)
    hit = (t_far > 0.0) & (t_near <= t_far)
    return t_near, t_far, hit


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with OpenCV axes (x right, y down, z forward)

    ``rotation`` and ``position`` form the camera-to-world pose.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DataError("Camera focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise DataError("Camera resolution must be positive")
        rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(rotation.T @ rotation, np.eye(3), atol=1e-9):
            raise DataError("Camera rotation is not orthonormal")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "position", as_vec3(self.position))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float, rotation=None, position=None) -> "Camera":
        focal = 0.5 * width / math.tan(math.radians(fov_deg) / 2.0)
        return cls(
            fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0, width=width, height=height,
            rotation=np.eye(3) if rotation is None else rotation,
            position=np.zeros(3) if position is None else position,
        )

    def with_pose(self, rotation, position) -> "Camera":
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, rotation, position)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.position) @ self.rotation

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "rotation": self.rotation.tolist(), "position": self.position.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Camera":
        return cls(**data)


def project_point(camera: Camera, p_world) -> Tuple[float, float]:
    """Pinhole projection pi(x) to pixel coordinates"""
    p_cam = camera.world_to_camera(as_vec3(p_world))
    if p_cam[2] <= MIN_CAMERA_DEPTH:
        raise BehindCameraError(f"Point {p_world} is behind the camera (z={p_cam[2]:.3g})")
    return (
        float(camera.fx * p_cam[0] / p_cam[2] + camera.cx),
        float(camera.fy * p_cam[1] / p_cam[2] + camera.cy),
    )


def project_points(camera: Camera, points: np.ndarray):
    """Batched projection returning (uv, in_front) without raising"""
    p_cam = camera.world_to_camera(points)
    z = p_cam[..., 2]
    in_front = z > MIN_CAMERA_DEPTH
    safe_z = np.where(in_front, z, 1.0)
    u = camera.fx * p_cam[..., 0] / safe_z + camera.cx
    v = camera.fy * p_cam[..., 1] / safe_z + camera.cy
    return np.stack([u, v], axis=-1), in_front


def camera_rays(camera: Camera, pixels: Optional[np.ndarray] = None):
    """World-space rays through pixel centers

    ``pixels`` is an (N, 2) array of (row, col); all pixels in row-major order when omitted.
    """
    if pixels is None:
        rows, cols = np.meshgrid(np.arange(camera.height), np.arange(camera.width), indexing="ij")
        pixels = np.stack([rows.ravel(), cols.ravel()], axis=-1)
    pixels = np.asarray(pixels)
    u = pixels[:, 1] + 0.5
    v = pixels[:, 0] + 0.5
    d_cam = np.stack([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones(len(pixels))], axis=-1)
    directions = normalize(d_cam @ camera.rotation.T)
    origins = np.broadcast_to(camera.position, directions.shape).copy()
    return origins, directions


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Camera-to-world rotation whose z axis points from eye to target"""
    eye, target, up = as_vec3(eye), as_vec3(target), as_vec3(up)
    forward = target - eye
    if np.linalg.norm(forward) < 1e-12:
        raise NumericalDomainError("look_at eye and target coincide")
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


def orbit_camera(
    target, radius: float, yaw_deg: float, elevation_deg: float,
    width: int, height: int, fov_deg: float,
) -> Camera:
    """Camera on a sphere around target; yaw 0 looks along +z"""
    yaw, elevation = math.radians(yaw_deg), math.radians(elevation_deg)
    target = as_vec3(target)
    offset = radius * np.array([
        -math.sin(yaw) * math.cos(elevation),
        math.sin(elevation),
        -math.cos(yaw) * math.cos(elevation),
    ])
    eye = target + offset
    return Camera.from_fov(width, height, fov_deg, rotation=look_at(eye, target), position=eye)


def orbit_cameras(
    count: int, target, radius: float, elevation_deg: float,
    width: int, height: int, fov_deg: float, start_yaw_deg: float = 0.0,
):
    """Evenly spaced camera ring"""
    return [
        orbit_camera(target, radius, start_yaw_deg + 360.0 * i / count, elevation_deg, width, height, fov_deg)
        for i in range(count)
    ]
