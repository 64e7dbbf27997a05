import numpy as np
import pandas as pd
import pytest

from app.exceptions import DataError, ShapeMismatchError
from app.models.config import MetricsConfig
from app.models.geometry import Aabb, rotation_about_axis
from app.models.mesh import PointCloud, TriangleMesh
from app.models.report import EvalReport
from app.services.marching_cubes import marching_cubes
from app.services.metrics import (
    chamfer_distance, depth_normal_error, evaluate_meshes, f_score, icp_align, kabsch, masked_image_l1,
    nearest_neighbors, normal_consistency, normalize_longest_edge, novel_view_errors,
)

# well separated, no symmetry
ASYMMETRIC = np.array([
    [0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.5, 0.0], [0.0, 0.0, 1.0],
    [2.0, 1.5, 0.8], [-1.0, 1.0, 1.5], [1.0, -1.0, -0.5],
])


@pytest.fixture
def ball() -> TriangleMesh:
    return marching_cubes(lambda p: np.linalg.norm(p, axis=1) - 0.5, Aabb.cube(1.0), 12)


class TestNearestNeighbors:
    def test_ties_go_to_lower_index(self):
        _, index = nearest_neighbors(np.zeros((1, 3)), np.array([[1.0, 0, 0], [-1.0, 0, 0]]))
        assert index.tolist() == [0]

    @pytest.mark.parametrize("seed", range(10))
    def test_many_way_tie_goes_to_lowest_index(self, seed):
        rng = np.random.default_rng(seed)
        filler = rng.uniform(5.0, 10.0, size=(20, 3))
        axes = np.concatenate([np.eye(3), -np.eye(3)])[rng.permutation(6)]
        distance, index = nearest_neighbors(np.zeros((2, 3)), np.concatenate([filler, axes]))
        assert index.tolist() == [20, 20]
        assert distance.tolist() == [1.0, 1.0]

    def test_empty_reference(self):
        with pytest.raises(DataError):
            nearest_neighbors(np.zeros((1, 3)), np.zeros((0, 3)))

    def test_matches_brute_force_scan(self, rng):
        query, reference = rng.normal(size=(200, 3)), rng.normal(size=(300, 3))
        distance, index = nearest_neighbors(query, reference)
        scan = np.linalg.norm(query[:, None, :] - reference[None, :, :], axis=2)
        assert index.tolist() == np.argmin(scan, axis=1).tolist()
        assert distance == pytest.approx(scan.min(axis=1), abs=1e-12)


class TestIcp:
    def test_identical_clouds(self, rng):
        cloud = rng.normal(size=(100, 3)) * [3.0, 2.0, 1.0]
        result = icp_align(cloud, cloud)
        assert np.allclose(result.rotation, np.eye(3), atol=1e-6)
        assert np.allclose(result.translation, 0.0, atol=1e-6)
        assert result.error == pytest.approx(0.0, abs=1e-12)

    def test_pure_translation(self):
        result = icp_align(ASYMMETRIC - [0.3, 0.0, 0.0], ASYMMETRIC)
        assert result.translation == pytest.approx([0.3, 0.0, 0.0], abs=1e-6)
        assert np.allclose(result.rotation, np.eye(3), atol=1e-6)

    def test_recovers_small_rotation(self):
        rotation = rotation_about_axis("z", 10.0)
        source = (ASYMMETRIC - [0.2, 0.1, 0.0]) @ rotation
        result = icp_align(source, ASYMMETRIC)
        assert np.allclose(result.rotation, rotation, atol=1e-6)
        assert np.max(np.abs(result.apply(source) - ASYMMETRIC)) < 1e-6
        assert not result.degenerate

    def test_needs_three_points(self):
        with pytest.raises(DataError):
            icp_align(np.zeros((2, 3)), np.zeros((5, 3)))

    def test_collinear_cloud_is_degenerate(self):
        line = np.outer(np.arange(5.0), [1.0, 0.0, 0.0])
        assert kabsch(line, line + 1.0)[2] is False


class TestPointCloudMetrics:
    def test_chamfer_single_points(self):
        assert chamfer_distance(np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]])) == pytest.approx(2.0)

    def test_chamfer_ignores_duplicates(self):
        a = np.zeros((2, 3))
        assert chamfer_distance(a, np.array([[1.0, 0.0, 0.0]])) == pytest.approx(2.0)

    def test_chamfer_sum_mode(self):
        a = np.zeros((2, 3))
        assert chamfer_distance(a, np.array([[1.0, 0.0, 0.0]]), mode="sum") == pytest.approx(3.0)

    def test_chamfer_is_symmetric_and_rigid_invariant(self, rng):
        a, b = rng.normal(size=(60, 3)), rng.normal(size=(80, 3))
        rotation, shift = rotation_about_axis("x", 37.0), np.array([0.4, -1.0, 2.0])
        moved = chamfer_distance(a @ rotation.T + shift, b @ rotation.T + shift)
        assert chamfer_distance(a, b) == pytest.approx(chamfer_distance(b, a), abs=1e-12)
        assert moved == pytest.approx(chamfer_distance(a, b), abs=1e-9)

    def test_chamfer_unknown_mode(self):
        with pytest.raises(DataError):
            chamfer_distance(np.zeros((1, 3)), np.zeros((1, 3)), mode="max")

    def test_f_score_identical(self, rng):
        cloud = rng.normal(size=(20, 3))
        assert f_score(cloud, cloud, 0.01) == pytest.approx(100.0)

    def test_f_score_far_apart(self):
        assert f_score(np.zeros((3, 3)), np.full((3, 3), 5.0), 0.1) == 0.0

    def test_f_score_partial(self):
        pred = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        assert f_score(pred, np.zeros((1, 3)), 0.1) == pytest.approx(200.0 / 3.0)

    def test_f_score_grows_with_threshold(self, rng):
        a, b = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
        scores = [f_score(a, b, tau) for tau in (0.05, 0.1, 0.2, 0.4, 0.8)]
        assert scores == sorted(scores)
        assert f_score(a, b, 0.2) == pytest.approx(f_score(b, a, 0.2))

    def test_normal_consistency(self):
        points = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        up = PointCloud(points, np.tile([0.0, 0.0, 1.0], (2, 1)))
        down = PointCloud(points, np.tile([0.0, 0.0, -1.0], (2, 1)))
        side = PointCloud(points, np.tile([1.0, 0.0, 0.0], (2, 1)))
        assert normal_consistency(up, up) == pytest.approx(1.0)
        assert normal_consistency(up, down) == pytest.approx(1.0)
        assert normal_consistency(up, side) == pytest.approx(0.0)

    def test_normal_consistency_needs_normals(self):
        with pytest.raises(DataError):
            normal_consistency(PointCloud(np.zeros((1, 3))), PointCloud(np.zeros((1, 3))))


class TestNormalization:
    def test_longest_edge_becomes_two(self):
        slab = TriangleMesh([[0, 0, 0], [4, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2], [0, 1, 3]])
        normalized, scale = normalize_longest_edge(slab)
        assert scale == pytest.approx(0.5)
        assert np.max(normalized.bounds().extent) == pytest.approx(2.0)

    def test_already_normalized(self, ball):
        _, scale = normalize_longest_edge(ball, Aabb.cube(1.0))
        assert scale == pytest.approx(1.0)


class TestImageErrors:
    @pytest.fixture
    def images(self, rng):
        depth = rng.uniform(1.0, 3.0, size=(6, 6))
        normal = np.tile([0.0, 0.0, 1.0], (6, 6, 1))
        return depth, normal, np.ones((6, 6), dtype=bool)

    def test_identical_images(self, images):
        depth, normal, mask = images
        error = depth_normal_error(depth, normal, depth, normal, mask)
        assert error.depth_l1 == pytest.approx(0.0, abs=1e-9)
        assert error.normal_l1 == 0.0
        assert error.normal_angular == pytest.approx(0.0, abs=1e-6)

    def test_depth_alignment_removes_scale_and_shift(self, images):
        depth, normal, mask = images
        error = depth_normal_error(3.0 * depth + 1.0, normal, depth, normal, mask)
        assert error.depth_l1 == pytest.approx(0.0, abs=1e-9)

    def test_rotated_normals(self, images):
        depth, normal, mask = images
        tilted = normal @ rotation_about_axis("x", 10.0).T
        assert depth_normal_error(depth, tilted, depth, normal, mask).normal_angular == pytest.approx(10.0, abs=1e-6)

    def test_no_valid_pixels(self, images):
        depth, normal, _ = images
        with pytest.raises(DataError):
            depth_normal_error(depth, normal, depth, normal, np.zeros((6, 6), dtype=bool))

    def test_size_mismatch(self, images):
        depth, normal, mask = images
        with pytest.raises(ShapeMismatchError):
            depth_normal_error(depth[:5], normal, depth, normal, mask)

    def test_masked_image_l1(self):
        pred, gt = np.zeros((2, 2, 3)), np.zeros((2, 2, 3))
        pred[0, 0] = 0.3
        assert masked_image_l1(pred, gt, [[True, False], [False, False]]) == pytest.approx(0.3)

    def test_novel_views_of_matching_images(self, images):
        depth, normal, mask = images
        frame = novel_view_errors(
            lambda camera: (depth, normal, np.ones((6, 6))), lambda camera: (depth, normal, mask),
            target=(0, 0, 0), radius=3.0, elevation=20.0, width=6, height=6, fov=40.0,
        )
        assert frame["yaw"].tolist() == [-40.0, -30.0, -20.0, -15.0, -10.0, -5.0, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0]
        assert np.allclose(frame["depth_l1"], 0.0, atol=1e-9)


class TestEvaluateMeshes:
    def test_mesh_against_itself(self, ball):
        report = evaluate_meshes(ball, ball, MetricsConfig(samples=500, icp_iterations=10))
        assert report.cd == pytest.approx(0.0, abs=1e-9)
        assert report.fscore == pytest.approx(100.0)
        assert report.nc == pytest.approx(1.0)
        assert report.tau == pytest.approx(0.02)

    def test_literal_threshold(self, ball):
        report = evaluate_meshes(ball, ball, MetricsConfig(samples=200, fscore_mode="literal", icp=False))
        assert report.tau == pytest.approx(0.002)
        assert not report.icp

    def test_empty_mesh_rejected(self, ball):
        with pytest.raises(DataError):
            evaluate_meshes(TriangleMesh.empty(), ball)


class TestEvalReport:
    @pytest.fixture
    def report(self):
        return EvalReport(cd=1.5, fscore=90.0, nc=0.95, tau=0.02, samples=100, normalized=True)

    def test_json_is_sorted(self, report):
        text = report.to_json()
        assert text.index('"cd"') < text.index('"fscore"') < text.index('"nc"')

    def test_append_writes_header_once(self, report, tmp_path):
        path = str(tmp_path / "scores.csv")
        report.append_csv(path)
        report.append_csv(path)
        frame = pd.read_csv(path)
        assert list(frame.columns) == EvalReport.csv_columns()
        assert len(frame) == 2
        assert frame["fscore"].tolist() == [90.0, 90.0]

    def test_csv_row_has_no_header(self, report):
        assert not report.csv_row().startswith("cd")
        assert report.csv_row().count("\n") == 1
