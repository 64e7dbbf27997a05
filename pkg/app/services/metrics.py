"""
Reconstruction and rendering metrics

Point-cloud metrics use exact k-d tree nearest neighbours with ties broken by
the lowest reference index. Mesh evaluation follows one protocol: normalize
both meshes by the ground truth's longest edge, sample points, align the
prediction with ICP, then score Chamfer distance, F-Score and normal
consistency.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from app.exceptions import DataError, NumericalDomainError, ShapeMismatchError
from app.models.config import MetricsConfig
from app.models.geometry import Aabb, Camera, SimilarityTransform, normalize, orbit_camera
from app.models.mesh import PointCloud, TriangleMesh
from app.models.report import EvalReport
from app.services.mesh_ops import sample_surface_points

logger = logging.getLogger(__name__)

CD_UNITS = 1e3
NORMALIZED_EDGE = 2.0
NOVEL_VIEW_YAWS = (5.0, 10.0, 15.0, 20.0, 30.0, 40.0)


@dataclass
class IcpResult:
    rotation: np.ndarray
    translation: np.ndarray
    error: float
    iterations: int
    degenerate: bool = False

    @property
    def transform(self) -> SimilarityTransform:
        return SimilarityTransform(self.rotation, self.translation, 1.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation


@dataclass
class DepthNormalError:
    depth_l1: float
    normal_l1: float
    normal_angular: float


def _points(cloud) -> np.ndarray:
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    return points.reshape(-1, 3)


def nearest_neighbors(query: np.ndarray, reference: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Distance and index of the nearest reference point for every query point"""
    if not len(reference):
        raise DataError("Nearest-neighbour search against an empty cloud")
    tree = cKDTree(reference)
    if len(reference) == 1:
        distance, index = tree.query(query, k=1)
        return np.asarray(distance, dtype=np.float64), np.asarray(index, dtype=np.int64)
    query = np.atleast_2d(np.asarray(query, dtype=np.float64))
    distance, index = tree.query(query, k=2)
    chosen = index[:, 0].astype(np.int64)
    # more than two points may share the nearest distance
    for row in np.flatnonzero(distance[:, 0] == distance[:, 1]):
        radius = distance[row, 0] * (1.0 + 1e-12)
        chosen[row] = min(tree.query_ball_point(query[row], r=radius))
    return distance[:, 0], chosen


def kabsch(source: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray, bool]:
    """Least-squares rotation and translation taking source onto target

    Returns a translation-only solution and False when the cross-covariance
    is rank deficient.
    """
    centroid_s = source.mean(axis=0)
    centroid_t = target.mean(axis=0)
    H = (source - centroid_s).T @ (target - centroid_t)
    U, S, Vt = np.linalg.svd(H)
    if S[0] <= 1e-12 or S[1] <= 1e-9 * S[0]:
        return np.eye(3), centroid_t - centroid_s, False
    V = Vt.T
    d = np.sign(np.linalg.det(V @ U.T))
    R = V @ np.diag([1.0, 1.0, d]) @ U.T
    return R, centroid_t - R @ centroid_s, True


def icp_align(src, dst, max_iters: int = 50, tol: float = 1e-6) -> IcpResult:
    """
    Point-to-point ICP from centroid alignment

    Args:
        src: Cloud to move
        dst: Fixed cloud
        max_iters: Iteration cap
        tol: Stop once the mean squared error improves by less than this

    Returns:
        The lowest-error rigid transform seen, with a flag set if any solve fell back to translation
    """
    source, target = _points(src), _points(dst)
    if len(source) < 3 or len(target) < 3:
        raise DataError("ICP needs at least 3 points in each cloud")

    rotation = np.eye(3)
    translation = target.mean(axis=0) - source.mean(axis=0)
    best = IcpResult(rotation, translation, math.inf, 0)
    degenerate = False
    previous = math.inf
    for iteration in range(1, max_iters + 1):
        distance, index = nearest_neighbors(source @ rotation.T + translation, target)
        error = float(np.mean(distance ** 2))
        if error < best.error:
            best = IcpResult(rotation, translation, error, iteration)
        if previous - error < tol:
            break
        previous = error
        rotation, translation, ok = kabsch(source, target[index])
        if not ok:
            degenerate = True
            logger.warning("ICP correspondences are degenerate; using a translation-only step")
    best.degenerate = degenerate
    return best


def chamfer_distance(a, b, mode: str = "mean") -> float:
    """Symmetric squared nearest-neighbour distance, per-direction mean (or sum), in scene units"""
    pa, pb = _points(a), _points(b)
    if not len(pa) or not len(pb):
        raise DataError("Chamfer distance needs two non-empty clouds")
    d_ab, _ = nearest_neighbors(pa, pb)
    d_ba, _ = nearest_neighbors(pb, pa)
    if mode == "mean":
        return float(np.mean(d_ab ** 2) + np.mean(d_ba ** 2))
    if mode == "sum":
        return float(np.sum(d_ab ** 2) + np.sum(d_ba ** 2))
    raise DataError(f"Unknown Chamfer mode: {mode}")


def f_score(a, b, tau: float) -> float:
    """Harmonic mean of precision (a near b) and recall (b near a), in percent"""
    if tau <= 0:
        raise DataError(f"F-Score threshold must be positive, got {tau}")
    pa, pb = _points(a), _points(b)
    if not len(pa) or not len(pb):
        raise DataError("F-Score needs two non-empty clouds")
    d_ab, _ = nearest_neighbors(pa, pb)
    d_ba, _ = nearest_neighbors(pb, pa)
    precision = 100.0 * float(np.mean(d_ab <= tau))
    recall = 100.0 * float(np.mean(d_ba <= tau))
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def normal_consistency(pred: PointCloud, gt: PointCloud) -> float:
    """Mean |n_pred . n_gt| over nearest-neighbour pairs, averaged over both directions"""
    if pred.normals is None or gt.normals is None:
        raise DataError("Normal consistency needs normals on both clouds")
    if not len(pred) or not len(gt):
        raise DataError("Normal consistency needs two non-empty clouds")
    _, idx_a = nearest_neighbors(pred.points, gt.points)
    consist_a = np.mean(np.abs(np.sum(pred.normals * gt.normals[idx_a], axis=1)))
    _, idx_b = nearest_neighbors(gt.points, pred.points)
    consist_b = np.mean(np.abs(np.sum(gt.normals * pred.normals[idx_b], axis=1)))
    return float(np.clip(0.5 * (consist_a + consist_b), 0.0, 1.0))


def normalize_longest_edge(mesh: TriangleMesh, bbox: Optional[Aabb] = None) -> Tuple[TriangleMesh, float]:
    """Scale about the box center so the box's longest edge becomes 2

    ``bbox`` defaults to the mesh's own bounds; pass the ground truth's box to
    normalize a prediction/ground-truth pair with one transform.
    """
    box = bbox or mesh.bounds()
    longest = float(np.max(box.extent))
    if longest <= 1e-12:
        raise NumericalDomainError("Cannot normalize a mesh with a zero-extent bounding box")
    scale = NORMALIZED_EDGE / longest
    center = box.center
    vertices = center + scale * (mesh.vertices - center)
    return TriangleMesh(vertices, mesh.faces, mesh.normals), scale


def depth_normal_error(pred_depth: np.ndarray, pred_normal: np.ndarray, gt_depth: np.ndarray,
                       gt_normal: np.ndarray, mask: np.ndarray) -> DepthNormalError:
    """
    Scale-and-shift aligned depth L1 plus normal L1 and angular error over valid pixels

    Ground-truth depth is min-max mapped to [0, 1] over the valid pixels and the
    prediction is fitted to it by least squares before the L1.
    """
    pred_depth, gt_depth = np.asarray(pred_depth, np.float64), np.asarray(gt_depth, np.float64)
    pred_normal, gt_normal = np.asarray(pred_normal, np.float64), np.asarray(gt_normal, np.float64)
    if pred_depth.shape != gt_depth.shape:
        raise ShapeMismatchError("Predicted and ground-truth depth images differ in shape", name="depth")
    if pred_normal.shape != gt_normal.shape:
        raise ShapeMismatchError("Predicted and ground-truth normal images differ in shape", name="normal")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != gt_depth.shape:
        raise ShapeMismatchError("Valid mask does not match the image size", name="mask")
    if not np.any(mask):
        raise DataError("Depth/normal evaluation has no valid pixels")

    target = gt_depth[mask]
    span = target.max() - target.min()
    target = (target - target.min()) / span if span > 1e-12 else target - target.min()
    design = np.stack([pred_depth[mask], np.ones(int(mask.sum()))], axis=-1)
    coeffs, *_ = np.linalg.lstsq(design, target, rcond=None)
    depth_l1 = float(np.mean(np.abs(design @ coeffs - target)))

    n_pred = normalize(pred_normal[mask])
    n_gt = normalize(gt_normal[mask])
    normal_l1 = float(np.mean(np.abs(n_pred - n_gt)))
    cosine = np.clip(np.sum(n_pred * n_gt, axis=-1), -1.0, 1.0)
    angular = float(np.degrees(np.mean(np.arccos(cosine))))
    return DepthNormalError(depth_l1, normal_l1, angular)


def masked_image_l1(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """Mean absolute color error over masked pixels"""
    pred, gt = np.asarray(pred, np.float64), np.asarray(gt, np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatchError("Predicted and ground-truth images differ in shape", name="color")
    mask = np.asarray(mask, dtype=bool)
    if not np.any(mask):
        raise DataError("Image L1 has no masked pixels")
    return float(np.mean(np.abs(pred[mask] - gt[mask])))


def evaluate_meshes(pred: TriangleMesh, gt: TriangleMesh, cfg: Optional[MetricsConfig] = None,
                    rng: Optional[np.random.Generator] = None) -> EvalReport:
    """
    Score a predicted mesh against ground truth

    Args:
        pred: Reconstructed mesh
        gt: Reference mesh
        cfg: Sample count, threshold mode, Chamfer mode, normalization and ICP switches
        rng: Sampling generator (seed 0 when omitted)

    Returns:
        EvalReport with CD in units of 1e-3, F-Score in percent and NC
    """
    cfg = cfg or MetricsConfig()
    rng = rng or np.random.default_rng(0)
    if pred.is_empty or gt.is_empty:
        raise DataError("Cannot evaluate an empty mesh")
    scale = 1.0
    if cfg.normalize:
        reference = gt.bounds()
        gt, scale = normalize_longest_edge(gt, reference)
        pred, _ = normalize_longest_edge(pred, reference)

    # same stream for both meshes so identical meshes give identical clouds
    seed = int(rng.integers(2**63))
    pred_cloud = sample_surface_points(pred, cfg.samples, np.random.default_rng(seed))
    gt_cloud = sample_surface_points(gt, cfg.samples, np.random.default_rng(seed))
    degenerate = False
    if cfg.icp:
        result = icp_align(pred_cloud, gt_cloud, cfg.icp_iterations)
        pred_cloud = pred_cloud.transformed(result.rotation, result.translation)
        degenerate = result.degenerate

    cd = chamfer_distance(pred_cloud, gt_cloud, cfg.chamfer_mode) * CD_UNITS
    fscore = f_score(pred_cloud, gt_cloud, cfg.threshold)
    nc = normal_consistency(pred_cloud, gt_cloud)
    logger.info(f"Mesh metrics: cd={cd:.4f} fscore={fscore:.2f} nc={nc:.4f}")
    return EvalReport(
        cd=cd, fscore=fscore, nc=nc, tau=cfg.threshold, samples=cfg.samples, normalized=cfg.normalize,
        normalization_scale=scale, chamfer_mode=cfg.chamfer_mode, icp=cfg.icp, icp_degenerate=degenerate,
    )


def novel_view_errors(render: Callable[[Camera], Tuple[np.ndarray, np.ndarray, np.ndarray]],
                      ground_truth: Callable[[Camera], Tuple[np.ndarray, np.ndarray, np.ndarray]],
                      target, radius: float, elevation: float, width: int, height: int, fov: float,
                      reference_yaw: float = 0.0, offsets: Sequence[float] = NOVEL_VIEW_YAWS) -> pd.DataFrame:
    """
    Depth and normal error on cameras swung to both sides of a reference view

    Args:
        render: Camera to predicted (depth, normal, acc) images
        ground_truth: Camera to reference (depth, normal, valid mask) images
        target: Orbit center
        radius, elevation, width, height, fov: Orbit camera settings
        reference_yaw: Yaw of the reference view in degrees
        offsets: Positive yaw offsets; each is evaluated at +offset and -offset

    Returns:
        One row per yaw with depth_l1, normal_l1 and normal_angular
    """
    rows = []
    for offset in sorted({sign * o for o in offsets for sign in (-1.0, 1.0)}):
        camera = orbit_camera(target, radius, reference_yaw + offset, elevation, width, height, fov)
        pred_depth, pred_normal, acc = render(camera)
        gt_depth, gt_normal, valid = ground_truth(camera)
        mask = np.asarray(valid, dtype=bool) & (np.asarray(acc) > 0.5)
        if not np.any(mask):
            logger.warning(f"No overlapping valid pixels at yaw offset {offset:+g}; skipping")
            continue
        error = depth_normal_error(pred_depth, pred_normal, gt_depth, gt_normal, mask)
        rows.append({"yaw": offset, "depth_l1": error.depth_l1, "normal_l1": error.normal_l1,
                     "normal_angular": error.normal_angular})
    return pd.DataFrame(rows, columns=["yaw", "depth_l1", "normal_l1", "normal_angular"])
