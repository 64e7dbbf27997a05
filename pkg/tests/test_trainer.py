import math

import numpy as np
import pandas as pd
import pytest

from app.exceptions import DataError, DivergenceError
from app.models.geometry import Camera, SimilarityTransform
from app.models.sdf import sphere
from app.services import trainer as trainer_module
from app.services.ground_truth import GroundTruthObject, generate_views
from app.services.trainer import (
    Trainer, canonical_camera, heldout_image_l1, heldout_sdf_error, train, train_scene,
)


@pytest.fixture
def views(tiny_config, red_sphere):
    return generate_views([red_sphere], tiny_config.data)


class TestTrainer:
    def test_history_columns(self, tiny_config, red_sphere, views):
        result = train(tiny_config, red_sphere, views)
        assert result.epochs == 3
        assert list(result.history["epoch"]) == [1, 2, 3]
        for column in ("loss_3d", "loss_rgb", "loss_depth", "loss_normal", "total",
                       "weight_3d", "weight_rgb", "weight_depth", "weight_normal", "lr", "beta"):
            assert column in result.history.columns
        assert np.all(np.isfinite(result.history["total"]))

    def test_same_seed_same_run(self, tiny_config, red_sphere, views):
        first = train(tiny_config, red_sphere, views)
        second = train(tiny_config, red_sphere, views)
        pd.testing.assert_frame_equal(first.history, second.history)
        point = np.array([[0.1, 0.2, -0.3]])
        assert first.field.sdf(point)[0] == second.field.sdf(point)[0]

    def test_stage_one_has_no_2d_losses(self, tiny_config, red_sphere, views):
        history = train(tiny_config, red_sphere, views).history
        first = history.iloc[0]
        assert first["weight_rgb"] == 0.0 and first["weight_depth"] == 0.0 and first["weight_normal"] == 0.0
        assert first["loss_rgb"] == 0.0
        assert history.iloc[-1]["weight_rgb"] > 0.0
        assert history.iloc[-1]["loss_rgb"] > 0.0

    def test_parameters_move(self, tiny_config, red_sphere, views):
        trainer = Trainer(tiny_config, red_sphere, views)
        before = trainer.field.copy()
        result = trainer.train()
        point = np.zeros((1, 3))
        assert result.field.sdf(point)[0] != before.sdf(point)[0]

    def test_iterations_capped_per_epoch(self, tiny_config, red_sphere, views):
        assert Trainer(tiny_config, red_sphere, views).iterations == tiny_config.train.max_iterations_per_epoch

    def test_needs_views(self, tiny_config, red_sphere):
        with pytest.raises(DataError):
            Trainer(tiny_config, red_sphere, [])

    def test_divergence_keeps_last_good_field(self, tiny_config, red_sphere, views, monkeypatch):
        def poisoned_lr(base, epoch, *args):
            return base if epoch < 2 else math.nan

        monkeypatch.setattr(trainer_module, "learning_rate", poisoned_lr)
        with pytest.raises(DivergenceError) as info:
            train(tiny_config, red_sphere, views)
        error = info.value
        assert error.epoch == 2
        assert list(error.history["epoch"]) == [1]
        assert error.field.params.all_finite()

    def test_scene_objects_train_independently(self, tiny_config):
        left = GroundTruthObject("left", sphere(0.8), SimilarityTransform(translation=(-0.6, 0.0, 0.0), scale=0.5))
        right = GroundTruthObject("right", sphere(0.8), SimilarityTransform(translation=(0.6, 0.0, 0.0), scale=0.5))
        config = tiny_config.model_copy(update={"train": tiny_config.train.model_copy(update={"epochs": 1})})
        results = train_scene(config, [left, right], generate_views([left, right], config.data))
        assert set(results) == {"left", "right"}
        assert results["left"].field.object_id == "left"


class TestHeldout:
    def test_sdf_error_is_finite_and_seeded(self, tiny_config, red_sphere, views):
        field = train(tiny_config, red_sphere, views).field
        first = heldout_sdf_error(field, red_sphere, 50, 50)
        assert math.isfinite(first) and first >= 0.0
        assert heldout_sdf_error(field, red_sphere, 50, 50) == first

    def test_image_error_over_visible_pixels(self, tiny_config, red_sphere, views):
        field = train(tiny_config, red_sphere, views).field
        error = heldout_image_l1(field, red_sphere, views, samples=8)
        assert 0.0 <= error <= 1.0

    def test_empty_heldout_set(self, tiny_config, red_sphere, views):
        field = Trainer(tiny_config, red_sphere, views).field
        with pytest.raises(DataError):
            heldout_sdf_error(field, red_sphere, 0, 0)


class TestCanonicalCamera:
    def test_identity_placement_keeps_pose(self, red_sphere):
        camera = Camera.from_fov(8, 8, 40.0, position=(0.0, 0.0, -3.0))
        assert np.allclose(canonical_camera(camera, red_sphere).position, camera.position)

    def test_scaled_placement(self):
        target = GroundTruthObject("small", sphere(1.0), SimilarityTransform(translation=(1.0, 0.0, 0.0), scale=0.5))
        camera = Camera.from_fov(8, 8, 40.0, position=(1.0, 0.0, -3.0))
        moved = canonical_camera(camera, target)
        assert moved.position == pytest.approx([0.0, 0.0, -6.0])
        assert np.allclose(moved.rotation, camera.rotation)
