"""
Training loop for one object field

Each epoch draws a fresh supervision point set X and splits it across the
epoch's iterations; every iteration draws rays from the masked pixels of one
random view. Objects in a multi-object scene are trained independently.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from app.config import settings
from app.exceptions import DataError, DivergenceError
from app.models.config import RunConfig
from app.models.geometry import Camera, apply_similarity, camera_rays, ray_aabb_intersect_batch, transform_box
from app.models.sdf import build_sdf_grid, evaluate_analytic_sdf, sample_sdf_grid
from app.services import autodiff as ad
from app.services.autodiff import Tape, adam_step, backward
from app.services.curriculum import (
    LossWeights, curriculum_weights, learning_rate, schedule_from_config, weights_from_config,
)
from app.services.field_model import (
    ObjectField, beta_var, field_forward, implicit_forward_batch, init_object_field,
)
from app.services.ground_truth import GroundTruthObject, GroundTruthView, sample_supervision_points
from app.services.losses import loss_3d, loss_geometric, loss_rgb
from app.services.volrender import composite_vars, density_var, render_view, stratified_samples_batch
from app.utils.logging import format_losses

logger = logging.getLogger(__name__)
training_logger = logging.getLogger("training")

LOSS_COLUMNS = ["loss_3d", "loss_3d_mean", "loss_rgb", "loss_depth", "loss_normal", "total"]


@dataclass
class TrainResult:
    field: ObjectField
    history: pd.DataFrame
    epochs: int


@dataclass
class _ViewPixels:
    view: GroundTruthView
    rows: np.ndarray
    cols: np.ndarray


def canonical_camera(camera: Camera, target: GroundTruthObject) -> Camera:
    """The same camera expressed in the object's canonical frame"""
    transform = target.transform
    rotation = transform.rotation.T @ camera.rotation
    position = apply_similarity(transform, camera.position, inverse=True)
    return camera.with_pose(rotation, position)


class Trainer:
    """Fits an ObjectField to one analytic object and its ground-truth views"""

    def __init__(self, config: RunConfig, target: GroundTruthObject, views: Sequence[GroundTruthView],
                 field: Optional[ObjectField] = None):
        if not views:
            raise DataError("Training needs at least one view")
        self.config = config
        self.target = target
        self.rng = np.random.default_rng(config.seed)
        self.field = field or init_object_field(
            config.model, self.rng, camera=canonical_camera(views[0].camera, target),
            bbox=target.bbox, object_id=target.object_id,
        )
        self.grid = build_sdf_grid(target.sdf, target.bbox, config.train.grid_resolution)
        self.pixels = self._collect_pixels(views)
        self.schedule = schedule_from_config(config.curriculum, config.train.epochs)
        self.base_weights = weights_from_config(config.loss)

        masked = sum(len(p.rows) for p in self.pixels)
        self.iterations = max(1, min(math.ceil(masked / config.train.rays), config.train.max_iterations_per_epoch))

    def _collect_pixels(self, views: Sequence[GroundTruthView]) -> List[_ViewPixels]:
        pixels = []
        for view in views:
            rows, cols = np.nonzero(view.mask(self.target.object_id))
            if len(rows):
                pixels.append(_ViewPixels(view, rows, cols))
        if not pixels:
            logger.warning(f"No view shows object {self.target.object_id}; training on 3D supervision only")
        return pixels

    def true_sdf(self, points: np.ndarray) -> np.ndarray:
        if self.config.train.sdf_source == "grid":
            return sample_sdf_grid(self.grid, points)
        return evaluate_analytic_sdf(self.target.sdf, points)

    def train(self) -> TrainResult:
        cfg = self.config.train
        rows = []
        last_good = self.field.copy()
        epochs = tqdm(range(1, cfg.epochs + 1), desc=f"train {self.target.object_id}",
                      disable=not settings.PROGRESS, leave=False)
        for epoch in epochs:
            weights = curriculum_weights(self.schedule, self.base_weights, epoch)
            lr = learning_rate(cfg.lr, epoch, cfg.epochs, cfg.lr_milestones, cfg.lr_decay)
            supervision = sample_supervision_points(
                self.grid, self.target.sdf, cfg.uniform_points, cfg.near_points, cfg.band,
                self.rng, cfg.sdf_source,
            )
            chunks = np.array_split(np.arange(len(supervision)), self.iterations)

            totals = dict.fromkeys(LOSS_COLUMNS, 0.0)
            for chunk in chunks:
                try:
                    terms = self.step(weights, lr, supervision.points[chunk], supervision.sdf[chunk])
                except DivergenceError as exc:
                    history = pd.DataFrame(rows)
                    raise DivergenceError(str(exc), field=last_good, history=history, epoch=epoch)
                for key, value in terms.items():
                    totals[key] += value / self.iterations

            row = {"epoch": epoch, **totals, **weights.as_dict(), "lr": lr, "beta": self.field.beta}
            rows.append(row)
            last_good = self.field.copy()
            training_logger.info(f"epoch {epoch}/{cfg.epochs} {format_losses(totals)} lr={lr:.2e}")

        return TrainResult(field=self.field, history=pd.DataFrame(rows), epochs=cfg.epochs)

    def step(self, weights: LossWeights, lr: float, points: np.ndarray, true_sdf: np.ndarray) -> Dict[str, float]:
        """One Adam step on a ray batch plus a slice of the point set"""
        cfg = self.config
        field = self.field
        tape = Tape()
        bound = field.bind(tape)
        total = None
        terms = dict.fromkeys(LOSS_COLUMNS, 0.0)
        count = 0

        if len(points):
            sdf_x, _, _ = implicit_forward_batch(cfg.model, field.camera, bound, points)
            l3 = loss_3d(sdf_x, true_sdf)
            terms["loss_3d"] += float(l3.value)
            total = ad.mul(l3, weights.weight_3d)
            count += len(points)

        batch = self._ray_batch() if self.pixels else None
        if batch is not None:
            ray_total, ray_terms, ray_count = self._ray_losses(bound, weights, batch)
            total = ray_total if total is None else ad.add(total, ray_total)
            count += ray_count
            for key, value in ray_terms.items():
                terms[key] += value

        if total is None:
            return terms
        terms["loss_3d_mean"] = terms["loss_3d"] / max(count, 1)
        terms["total"] = float(total.value)
        if not math.isfinite(terms["total"]):
            raise DivergenceError("Training loss is not finite")

        grads = backward(tape, total)
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise DivergenceError("Training gradients are not finite")
        adam_step(field.params, grads, lr)
        if not field.params.all_finite():
            raise DivergenceError("Parameters became non-finite after the optimizer step")
        return terms

    def _ray_batch(self):
        view_pixels = self.pixels[int(self.rng.integers(len(self.pixels)))]
        available = len(view_pixels.rows)
        pick = np.sort(self.rng.choice(available, size=min(self.config.train.rays, available), replace=False))
        rows, cols = view_pixels.rows[pick], view_pixels.cols[pick]
        view = view_pixels.view
        origins, directions = camera_rays(view.camera, np.stack([rows, cols], axis=-1))
        box = transform_box(self.target.transform, self.target.bbox)
        t_near, t_far, hit = ray_aabb_intersect_batch(origins, directions, box)
        if not np.any(hit):
            return None
        keep = np.flatnonzero(hit)
        t, delta = stratified_samples_batch(
            t_near[keep], t_far[keep], self.config.train.samples, self.config.train.jitter, self.rng
        )
        return {
            "origins": origins[keep], "directions": directions[keep], "t": t, "delta": delta,
            "color": view.color[rows[keep], cols[keep]], "depth": view.depth[rows[keep], cols[keep]],
            "normal": view.normal[rows[keep], cols[keep]],
        }

    def _ray_losses(self, bound, weights: LossWeights, batch):
        cfg = self.config
        transform = self.target.transform
        t, delta = batch["t"], batch["delta"]
        rays, samples = t.shape
        world = batch["origins"][:, None, :] + t[..., None] * batch["directions"][:, None, :]
        canonical = apply_similarity(transform, world.reshape(-1, 3), inverse=True)
        true_sdf = self.true_sdf(canonical)
        terms: Dict[str, float] = {}

        if not weights.uses_2d:
            sdf, _, _ = implicit_forward_batch(cfg.model, self.field.camera, bound, canonical)
            l3 = loss_3d(sdf, true_sdf)
            terms["loss_3d"] = float(l3.value)
            return ad.mul(l3, weights.weight_3d), terms, len(canonical)

        directions = np.repeat(batch["directions"] @ transform.rotation, samples, axis=0)
        out = field_forward(cfg.model, self.field.camera, bound, canonical, directions, with_normals=True)
        l3 = loss_3d(out["sdf"], true_sdf)
        sigma = ad.reshape(density_var(beta_var(bound), ad.mul(out["sdf"], transform.scale)), (rays, samples))
        color = ad.reshape(out["color"], (rays, samples, 3))
        normal = ad.reshape(ad.matvec(transform.rotation, out["normals"]), (rays, samples, 3))
        comp = composite_vars(sigma, delta, t, color, normal)

        l_rgb, _ = loss_rgb(comp["color"], batch["color"])
        l_depth, l_normal = loss_geometric(comp["depth"], batch["depth"], comp["normal"], batch["normal"])
        total = ad.add(
            ad.add(ad.mul(l3, weights.weight_3d), ad.mul(l_rgb, weights.weight_rgb)),
            ad.add(ad.mul(l_depth, weights.weight_depth), ad.mul(l_normal, weights.weight_normal)),
        )
        terms.update({
            "loss_3d": float(l3.value), "loss_rgb": float(l_rgb.value),
            "loss_depth": float(l_depth.value), "loss_normal": float(l_normal.value),
        })
        return total, terms, len(canonical)


def train(config: RunConfig, target: GroundTruthObject, views: Sequence[GroundTruthView],
          field: Optional[ObjectField] = None) -> TrainResult:
    return Trainer(config, target, views, field).train()


def train_scene(config: RunConfig, objects: Sequence[GroundTruthObject],
                views: Sequence[GroundTruthView]) -> Dict[str, TrainResult]:
    """Train every object of a scene on its own"""
    results = {}
    for target in objects:
        logger.info(f"Training object {target.object_id}")
        results[target.object_id] = train(config, target, views)
    return results


# --- held-out evaluation ----------------------------------------------------------

def heldout_sdf_error(field: ObjectField, target: GroundTruthObject, n_uniform: int = 1000, n_near: int = 1000,
                      band: float = 0.05, seed: int = 12345) -> float:
    """Mean |s_hat - s| on a fresh supervision point set"""
    rng = np.random.default_rng(seed)
    grid = build_sdf_grid(target.sdf, target.bbox, 2)
    points = sample_supervision_points(grid, target.sdf, n_uniform, n_near, band, rng)
    if not len(points):
        raise DataError("Held-out point set is empty")
    return float(np.mean(np.abs(field.sdf(points.points) - points.sdf)))


def heldout_image_l1(field: ObjectField, target: GroundTruthObject, views: Sequence[GroundTruthView],
                     samples: int = 64, background=(0.5, 0.5, 0.5), workers: Optional[int] = None) -> float:
    """Mean absolute color error over pixels where the object is visible"""
    errors = []
    for view in views:
        mask = view.mask(target.object_id)
        if not np.any(mask):
            continue
        images = render_view(field, target.transform, view.camera, samples, background, workers)
        errors.append(np.abs(images.color[mask] - view.color[mask]).ravel())
    if not errors:
        raise DataError(f"No held-out view shows object {target.object_id}")
    return float(np.mean(np.concatenate(errors)))
