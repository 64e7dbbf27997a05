"""
Triangle meshes and oriented point clouds
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.exceptions import DataError
from app.models.geometry import Aabb


@dataclass(frozen=True)
class TriangleMesh:
    """Vertex positions (V, 3), faces (F, 3) and optional per-vertex normals"""

    vertices: np.ndarray
    faces: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(faces) and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise DataError("Mesh face indices out of range")
        normals = self.normals
        if normals is not None:
            normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
            if len(normals) != len(vertices):
                raise DataError("Mesh normal count does not match vertex count")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "normals", normals)

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def bounds(self) -> Aabb:
        if len(self.vertices) == 0:
            raise DataError("Empty mesh has no bounds")
        return Aabb(self.vertices.min(axis=0), self.vertices.max(axis=0))

    def face_normals(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        cross = np.cross(b - a, c - a)
        norms = np.linalg.norm(cross, axis=1, keepdims=True)
        return np.where(norms > 0, cross / np.maximum(norms, 1e-300), 0.0)

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def edge_count(self) -> int:
        """Number of distinct undirected edges"""
        edges = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        return len(np.unique(edges, axis=0))

    def euler_characteristic(self) -> int:
        return len(self.vertices) - self.edge_count() + len(self.faces)


@dataclass(frozen=True)
class PointCloud:
    """Points (N, 3) with optional unit normals"""

    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        normals = self.normals
        if normals is not None:
            normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
            if len(normals) != len(points):
                raise DataError("Point cloud normal count does not match point count")
            lengths = np.linalg.norm(normals, axis=1)
            if len(lengths) and np.max(np.abs(lengths - 1.0)) > 1e-6:
                raise DataError("Point cloud normals must be unit length")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "normals", normals)

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray, scale: float = 1.0) -> "PointCloud":
        points = scale * self.points @ rotation.T + translation
        normals = None if self.normals is None else self.normals @ rotation.T
        return PointCloud(points, normals)
