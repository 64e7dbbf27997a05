# Models package
from .geometry import Aabb, Camera, Ray, SimilarityTransform
from .mesh import PointCloud, TriangleMesh
from .sdf import AnalyticSdf, SdfGrid

__all__ = [
    "Aabb", "Camera", "Ray", "SimilarityTransform",
    "PointCloud", "TriangleMesh",
    "AnalyticSdf", "SdfGrid",
]
