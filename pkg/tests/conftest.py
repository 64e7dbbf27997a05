"""
Shared fixtures: tiny run configs, seeded generators and analytic scenes
"""

import numpy as np
import pytest

from app.config import settings
from app.models.config import RunConfig
from app.models.geometry import Aabb, Camera, SimilarityTransform
from app.models.sdf import sphere
from app.services.field_model import AnalyticField
from app.services.ground_truth import GroundTruthObject

TINY_CONFIG = {
    "model": {
        "encoding": {"frequencies": 2},
        "implicit": {"layers": 2, "hidden": 8, "geometry_features": 4},
        "render": {"layers": 2, "hidden": 8},
        "conditioning": {"instance_features": 2, "pixel_features": 2, "feature_height": 4, "feature_width": 4},
    },
    "train": {"epochs": 3, "rays": 8, "near_points": 30, "uniform_points": 30, "samples": 8,
              "max_iterations_per_epoch": 2, "grid_resolution": 8},
    "curriculum": {"start_fraction": 0.34},
    "render": {"samples": 8, "width": 8, "height": 8, "chunk": 32},
    "data": {"views": 2, "width": 9, "height": 9},
    "metrics": {"samples": 400, "icp_iterations": 10},
    "seed": 7,
}


@pytest.fixture(autouse=True)
def quiet_progress(monkeypatch, tmp_path):
    """No progress bars, and logs inside the test's temp dir"""
    monkeypatch.setattr(settings, "PROGRESS", False)
    monkeypatch.setattr(settings, "LOG_DIR", str(tmp_path / "logs"))


@pytest.fixture
def tiny_config() -> RunConfig:
    return RunConfig.model_validate(TINY_CONFIG)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def test_camera() -> Camera:
    """fx = fy = 100, principal point (50, 50), identity pose"""
    return Camera(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


@pytest.fixture
def red_sphere() -> GroundTruthObject:
    return GroundTruthObject("sphere", sphere(0.5, color=(1.0, 0.0, 0.0)), SimilarityTransform.identity(),
                             Aabb.cube(1.0))


@pytest.fixture
def unit_sphere_field() -> AnalyticField:
    return AnalyticField(sphere(1.0), Aabb.cube(1.2), beta=0.005, object_id="unit")
