import math

import numpy as np
import pytest

from app.exceptions import BehindCameraError, DataError, NumericalDomainError
from app.models.geometry import (
    Aabb, Camera, Ray, SimilarityTransform, apply_similarity, camera_rays, look_at, orbit_camera,
    orbit_cameras, project_point, project_points, ray_aabb_intersect, rotation_about_axis, transform_box,
)


class TestRayBoxIntersection:
    def test_axis_aligned_hit(self):
        assert ray_aabb_intersect(Ray((0, 0, -3), (0, 0, 1)), Aabb.cube(1.0)) == pytest.approx((2.0, 4.0))

    def test_box_behind_ray(self):
        assert ray_aabb_intersect(Ray((0, 0, 5), (0, 0, 1)), Aabb.cube(1.0)) is None

    def test_origin_inside_box(self):
        assert ray_aabb_intersect(Ray((0, 0, 0), (1, 0, 0)), Aabb.cube(1.0)) == pytest.approx((0.0, 1.0))

    def test_parallel_ray_outside_slab_misses(self):
        assert ray_aabb_intersect(Ray((0, 2, -3), (0, 0, 1)), Aabb.cube(1.0)) is None

    def test_direction_is_normalized(self):
        hit = ray_aabb_intersect(Ray((0, 0, -3), (0, 0, 10)), Aabb.cube(1.0))
        assert hit == pytest.approx((2.0, 4.0))

    def test_zero_direction_rejected(self):
        with pytest.raises(NumericalDomainError):
            Ray((0, 0, 0), (0, 0, 0))


class TestProjection:
    def test_principal_axis(self, test_camera):
        assert project_point(test_camera, (0, 0, 2)) == pytest.approx((50.0, 50.0))

    def test_off_axis_point(self, test_camera):
        assert project_point(test_camera, (1, 0, 2)) == pytest.approx((100.0, 50.0))

    def test_behind_camera(self, test_camera):
        with pytest.raises(BehindCameraError):
            project_point(test_camera, (0, 0, -1))

    def test_batch_flags_points_behind(self, test_camera):
        uv, in_front = project_points(test_camera, np.array([[1.0, 0, 2], [0, 0, -1]]))
        assert in_front.tolist() == [True, False]
        assert uv[0] == pytest.approx([100.0, 50.0])

    def test_rays_pass_through_pixel_centers(self, test_camera):
        origins, directions = camera_rays(test_camera, np.array([[50, 50], [0, 99]]))
        assert np.allclose(origins, 0.0)
        assert directions[0] == pytest.approx(np.array([0.005, 0.005, 1.0]) / np.linalg.norm([0.005, 0.005, 1.0]))
        # re-projecting a point along the ray lands on the pixel center
        u, v = project_point(test_camera, 3.0 * directions[1])
        assert (u, v) == pytest.approx((99.5, 0.5))

    def test_all_pixels_in_row_major_order(self):
        camera = Camera.from_fov(4, 3, 60.0)
        origins, directions = camera_rays(camera)
        assert directions.shape == (12, 3)
        assert np.allclose(np.linalg.norm(directions, axis=1), 1.0)

    def test_camera_dict_round_trip(self):
        camera = orbit_camera((0, 0, 0), 3.0, 30.0, 20.0, 16, 12, 40.0)
        restored = Camera.from_dict(camera.to_dict())
        assert restored.width == 16 and restored.height == 12
        assert np.allclose(restored.rotation, camera.rotation)
        assert np.allclose(restored.position, camera.position)

    def test_non_orthonormal_pose_rejected(self):
        with pytest.raises(DataError):
            Camera(100, 100, 50, 50, 100, 100, rotation=2.0 * np.eye(3))


class TestOrbitCameras:
    def test_yaw_zero_looks_along_positive_z(self):
        camera = orbit_camera((0, 0, 0), 3.0, 0.0, 0.0, 32, 32, 40.0)
        assert camera.position == pytest.approx([0.0, 0.0, -3.0])
        assert camera.rotation[:, 2] == pytest.approx([0.0, 0.0, 1.0])

    def test_target_projects_to_image_center(self):
        for camera in orbit_cameras(5, (0.5, 0.0, 0.0), 3.0, 20.0, 33, 33, 40.0):
            assert project_point(camera, (0.5, 0.0, 0.0)) == pytest.approx((16.5, 16.5))

    def test_look_at_is_a_rotation(self):
        rotation = look_at((1.0, 2.0, -3.0), (0.0, 0.0, 0.0))
        assert np.allclose(rotation.T @ rotation, np.eye(3))
        assert np.linalg.det(rotation) == pytest.approx(1.0)

    def test_look_at_straight_down_is_defined(self):
        rotation = look_at((0.0, 3.0, 0.0), (0.0, 0.0, 0.0))
        assert rotation[:, 2] == pytest.approx([0.0, -1.0, 0.0])


class TestSimilarity:
    def test_identity(self):
        p = np.array([0.3, -1.2, 4.0])
        assert apply_similarity(SimilarityTransform.identity(), p) == pytest.approx(p)

    def test_hand_evaluation(self):
        t = SimilarityTransform(np.eye(3), (1.0, 0.0, 0.0), 2.0)
        assert apply_similarity(t, (1.0, 1.0, 1.0)) == pytest.approx([3.0, 2.0, 2.0])

    def test_round_trip(self, rng):
        t = SimilarityTransform(rotation_about_axis((1.0, 2.0, 0.5), 37.0), (0.2, -0.4, 1.1), 0.7)
        points = rng.normal(size=(50, 3))
        back = apply_similarity(t, apply_similarity(t, points), inverse=True)
        assert np.max(np.abs(back - points)) < 1e-9

    def test_compose_applies_right_operand_first(self):
        a = SimilarityTransform(rotation_about_axis("z", 90.0), (1.0, 0.0, 0.0), 2.0)
        b = SimilarityTransform(np.eye(3), (0.0, 1.0, 0.0), 0.5)
        p = np.array([0.3, 0.1, -0.2])
        assert apply_similarity(a.compose(b), p) == pytest.approx(apply_similarity(a, apply_similarity(b, p)))

    def test_matrix_matches_apply(self):
        t = SimilarityTransform(rotation_about_axis("y", 30.0), (0.5, 0.0, -1.0), 1.5)
        p = np.array([1.0, 2.0, 3.0])
        assert (t.to_matrix() @ np.append(p, 1.0))[:3] == pytest.approx(apply_similarity(t, p))

    def test_reflection_rejected(self):
        with pytest.raises(DataError):
            SimilarityTransform(np.diag([1.0, 1.0, -1.0]))

    def test_non_positive_scale_rejected(self):
        with pytest.raises(DataError):
            SimilarityTransform(scale=0.0)

    def test_transform_box_of_rotated_cube(self):
        t = SimilarityTransform(rotation_about_axis("z", 45.0), (1.0, 0.0, 0.0), 1.0)
        box = transform_box(t, Aabb.cube(1.0))
        assert box.max[0] == pytest.approx(1.0 + math.sqrt(2.0))
        assert box.max[2] == pytest.approx(1.0)


class TestAabb:
    def test_inverted_box_rejected(self):
        with pytest.raises(DataError):
            Aabb((1.0, 0.0, 0.0), (0.0, 1.0, 1.0))

    def test_union_and_contains(self):
        box = Aabb.cube(1.0).union(Aabb((2.0, 2.0, 2.0), (3.0, 3.0, 3.0)))
        assert box.min == pytest.approx([-1.0, -1.0, -1.0])
        assert box.max == pytest.approx([3.0, 3.0, 3.0])
        assert box.contains(np.array([[2.5, 0.0, 0.0], [4.0, 0.0, 0.0]])).tolist() == [True, False]

    def test_rotation_about_unknown_axis(self):
        with pytest.raises(DataError):
            rotation_about_axis("w", 10.0)
