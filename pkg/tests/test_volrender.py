import math

import numpy as np
import pytest

from app.models.geometry import Camera, Ray, SimilarityTransform, look_at, rotation_about_axis
from app.models.scene import SceneGraph, SceneInstance
from app.models.sdf import sphere
from app.services.field_model import AnalyticField
from app.services.volrender import (
    RaySamples, composite_ray, composite_scene_ray, composite_scene_rays, merge_samples, render_rays,
    render_scene_view, render_view, sample_instance, sdf_to_density, stratified_samples,
)

SHIFT_LEFT = SimilarityTransform(np.eye(3), (-0.6, 0.0, 0.0), 0.5)
SHIFT_RIGHT = SimilarityTransform(np.eye(3), (0.6, 0.0, 0.0), 0.5)


def two_sphere_scene(first: str = "left", second: str = "right") -> SceneGraph:
    field = AnalyticField(sphere(0.8), beta=0.005)
    instances = {
        "left": SceneInstance("left", field, SHIFT_LEFT),
        "right": SceneInstance("right", field, SHIFT_RIGHT),
    }
    return SceneGraph((instances[first], instances[second]))


class TestDensity:
    def test_surface_value(self):
        assert sdf_to_density(0.1, 0.0) == pytest.approx(5.0)

    def test_outside(self):
        assert sdf_to_density(0.1, 0.2) == pytest.approx(5.0 * math.exp(-2.0), abs=1e-6)

    def test_deep_inside_limit(self):
        assert sdf_to_density(0.1, -10.0) == pytest.approx(10.0, abs=1e-6)

    def test_continuous_across_surface(self):
        assert sdf_to_density(0.05, -1e-12) == pytest.approx(sdf_to_density(0.05, 1e-12))

    def test_vectorized(self):
        values = sdf_to_density(0.1, np.array([0.0, 0.2, -10.0]))
        assert values.shape == (3,)

    def test_beta_below_floor_is_clamped(self):
        assert np.isfinite(sdf_to_density(0.0, 0.0))

    @pytest.mark.parametrize("beta", [1e-3, 0.05, 0.1, 1.0])
    def test_bounded_and_non_increasing(self, beta):
        s = np.linspace(-5.0, 5.0, 10_001)
        density = sdf_to_density(beta, s)
        assert np.all(density >= 0.0)
        assert np.all(density <= 1.0 / beta)
        assert np.all(np.diff(density) <= 0.0)


class TestStratifiedSamples:
    def test_midpoints(self):
        samples = stratified_samples(Ray((0, 0, 0), (0, 0, 1)), 2.0, 4.0, 4)
        assert samples.t.tolist() == [2.25, 2.75, 3.25, 3.75]
        assert samples.delta == pytest.approx([0.5, 0.5, 0.5, 0.5])

    def test_single_sample(self):
        samples = stratified_samples(Ray((0, 0, 0), (1, 0, 0)), 2.0, 4.0, 1)
        assert samples.t.tolist() == [3.0]
        assert samples.delta.tolist() == [2.0]
        assert samples.points[0] == pytest.approx([3.0, 0.0, 0.0])

    def test_jitter_is_seeded_and_stays_in_bins(self):
        ray = Ray((0, 0, 0), (0, 0, 1))
        first = stratified_samples(ray, 2.0, 4.0, 8, jitter=True, rng=np.random.default_rng(3))
        second = stratified_samples(ray, 2.0, 4.0, 8, jitter=True, rng=np.random.default_rng(3))
        assert first.t.tolist() == second.t.tolist()
        edges = 2.0 + 0.25 * np.arange(9)
        assert np.all((first.t >= edges[:-1]) & (first.t <= edges[1:]))

    def test_degenerate_span(self):
        samples = stratified_samples(Ray((0, 0, 0), (0, 0, 1)), 2.0, 2.0, 4)
        assert samples.t.tolist() == [2.0]
        assert samples.delta.tolist() == [0.0]


class TestCompositing:
    def test_empty_space(self):
        out = composite_ray(RaySamples(t=np.array([1.0, 2.0]), delta=np.ones(2), sigma=np.zeros(2),
                                       color=np.ones((2, 3)), normal=np.ones((2, 3))))
        assert out.color.tolist() == [0.0, 0.0, 0.0]
        assert out.depth == 0.0 and out.acc == 0.0

    def test_opaque_first_sample(self):
        color = np.array([[0.2, 0.4, 0.6], [1.0, 1.0, 1.0]])
        out = composite_ray(RaySamples(t=np.array([1.5, 2.5]), delta=np.ones(2), sigma=np.array([30.0, 30.0]),
                                       color=color, normal=np.zeros((2, 3))))
        assert out.color == pytest.approx(color[0], abs=1e-9)
        assert out.depth == pytest.approx(1.5, abs=1e-9)
        assert out.acc == pytest.approx(1.0, abs=1e-9)

    def test_half_transparent_then_opaque(self):
        samples = RaySamples(
            t=np.array([1.0, 2.0]), delta=np.ones(2), sigma=np.array([math.log(2.0), 30.0]),
            color=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), normal=np.zeros((2, 3)),
        )
        out = composite_ray(samples)
        assert out.color == pytest.approx([0.5, 0.5, 0.0], abs=1e-9)
        assert out.acc == pytest.approx(1.0, abs=1e-9)

    def test_normals_follow_weights(self):
        samples = RaySamples(
            t=np.array([1.0, 2.0]), delta=np.ones(2), sigma=np.array([math.log(2.0), 30.0]),
            color=np.zeros((2, 3)), normal=np.array([[0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]),
        )
        assert composite_ray(samples).normal == pytest.approx([0.5, 0.0, -0.5], abs=1e-9)

    @pytest.mark.parametrize("seed", range(20))
    def test_random_rays_stay_bounded(self, seed):
        rng = np.random.default_rng(seed)
        count = int(rng.integers(1, 40))
        samples = RaySamples(
            t=np.cumsum(rng.uniform(0.01, 0.2, count)), delta=rng.uniform(0.0, 0.3, count),
            sigma=rng.exponential(5.0, count), color=rng.uniform(size=(count, 3)), normal=np.zeros((count, 3)),
        )
        out = composite_ray(samples)
        assert 0.0 <= out.acc <= 1.0 + 1e-12
        assert np.all(out.color >= 0.0)
        assert np.all(out.color <= out.acc + 1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_appending_samples_never_lowers_acc(self, seed):
        rng = np.random.default_rng(seed)
        count = 30
        t = np.cumsum(rng.uniform(0.01, 0.2, count))
        delta, sigma = rng.uniform(0.0, 0.3, count), rng.exponential(3.0, count)
        color = rng.uniform(size=(count, 3))
        acc = [
            composite_ray(RaySamples(t=t[:k], delta=delta[:k], sigma=sigma[:k], color=color[:k])).acc
            for k in range(1, count + 1)
        ]
        assert np.all(np.diff(acc) >= -1e-12)


class TestRenderView:
    def test_camera_facing_away_sees_background(self, unit_sphere_field):
        camera = Camera.from_fov(6, 6, 40.0, position=(0.0, 0.0, -3.0), rotation=look_at((0, 0, -3), (0, 0, -6)))
        images = render_view(unit_sphere_field, SimilarityTransform.identity(), camera, 16, (0.1, 0.2, 0.3))
        assert np.all(images.acc == 0.0)
        assert np.allclose(images.color, [0.1, 0.2, 0.3])

    def test_center_pixel_depth_of_unit_sphere(self, unit_sphere_field):
        camera = Camera.from_fov(9, 9, 30.0, position=(0.0, 0.0, -3.0))
        images = render_view(unit_sphere_field, SimilarityTransform.identity(), camera, 128)
        assert images.depth[4, 4] == pytest.approx(2.0, abs=0.05)
        assert images.acc[4, 4] == pytest.approx(1.0, abs=1e-3)
        assert images.normal[4, 4] == pytest.approx([0.0, 0.0, -1.0], abs=0.05)

    def test_worker_count_does_not_change_images(self, unit_sphere_field):
        camera = Camera.from_fov(8, 8, 40.0, position=(0.0, 0.0, -3.0))
        one = render_view(unit_sphere_field, SimilarityTransform.identity(), camera, 16, workers=1, chunk=10)
        four = render_view(unit_sphere_field, SimilarityTransform.identity(), camera, 16, workers=4, chunk=10)
        assert np.array_equal(one.color, four.color)
        assert np.array_equal(one.depth, four.depth)

    def test_world_density_uses_scaled_sdf(self):
        field = AnalyticField(sphere(1.0), beta=0.01)
        transform = SimilarityTransform(rotation_about_axis("y", 20.0), (0.0, 0.0, 0.0), 0.5)
        samples = sample_instance(field, transform, np.array([[0.0, 0.0, -3.0]]), np.array([[0.0, 0.0, 1.0]]), 32)
        world_sdf = np.linalg.norm(np.array([0.0, 0.0, -3.0]) + samples.t[0, :, None] * [0.0, 0.0, 1.0], axis=1) - 0.5
        assert samples.sigma[0] == pytest.approx(sdf_to_density(0.01, world_sdf), rel=1e-6, abs=1e-9)


class TestSceneComposition:
    def test_single_object_scene_matches_object_render(self, unit_sphere_field):
        scene = SceneGraph((SceneInstance("unit", unit_sphere_field, SimilarityTransform.identity()),))
        origins = np.tile([0.0, 0.1, -3.0], (3, 1))
        directions = np.array([[0.0, 0.0, 1.0], [0.1, 0.0, 0.995], [0.0, -0.2, 0.98]])
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        alone = render_rays(unit_sphere_field, SimilarityTransform.identity(), origins, directions, 32)
        composed = composite_scene_rays(scene, origins, directions, 32)
        assert np.max(np.abs(alone.color - composed.color)) < 1e-9
        assert np.max(np.abs(alone.depth - composed.depth)) < 1e-9
        assert np.max(np.abs(alone.acc - composed.acc)) < 1e-9

    def test_nearer_object_occludes(self):
        ray = Ray((-3.0, 0.0, 0.0), (1.0, 0.0, 0.0))
        scene = two_sphere_scene()
        left_only = SceneGraph((scene.get("left"),))
        composed = composite_scene_ray(scene, ray, 64)
        alone = composite_scene_ray(left_only, ray, 64)
        assert composed.depth == pytest.approx(alone.depth, abs=1e-3)
        assert composed.depth == pytest.approx(2.0, abs=0.05)

    def test_instance_order_does_not_matter(self):
        ray = Ray((-3.0, 0.5, -2.0), (1.0, -0.1, 0.7))
        a = composite_scene_ray(two_sphere_scene("left", "right"), ray, 32)
        b = composite_scene_ray(two_sphere_scene("right", "left"), ray, 32)
        assert a.color.tolist() == b.color.tolist()
        assert a.depth == b.depth

    def test_merged_deltas_never_exceed_own_delta(self):
        first = RaySamples(t=np.array([[1.0, 2.0]]), delta=np.array([[1.0, 1.0]]), sigma=np.zeros((1, 2)),
                           color=np.zeros((1, 2, 3)), normal=np.zeros((1, 2, 3)))
        second = RaySamples(t=np.array([[1.5, 5.0]]), delta=np.array([[0.2, 0.2]]), sigma=np.zeros((1, 2)),
                            color=np.zeros((1, 2, 3)), normal=np.zeros((1, 2, 3)))
        merged = merge_samples([first, second])
        assert merged.t.tolist() == [[1.0, 1.5, 2.0, 5.0]]
        assert merged.delta.tolist() == [[0.5, 0.2, 1.0, 0.2]]
        assert merged.object_ids.tolist() == [[0, 1, 0, 1]]

    def test_scene_view_uses_scene_background(self):
        scene = SceneGraph((SceneInstance("unit", AnalyticField(sphere(0.1)), SimilarityTransform.identity()),),
                           background=(1.0, 0.0, 0.0))
        camera = Camera.from_fov(4, 4, 10.0, position=(3.0, 3.0, -3.0))
        images = render_scene_view(scene, camera, 8)
        assert np.allclose(images.color, [1.0, 0.0, 0.0])
