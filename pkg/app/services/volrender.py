"""
SDF-to-density conversion, stratified ray sampling and transmittance compositing

Inference renders run on plain numpy; training composites the same quantities
on an autodiff tape (``composite_vars``).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from app.config import settings
from app.exceptions import DataError
from app.models.geometry import (
    Camera, Ray, SimilarityTransform, apply_similarity, camera_rays, normalize, ray_aabb_intersect_batch, transform_box,
)
from app.models.scene import SceneGraph
from app.services import autodiff as ad
from app.services.autodiff import Var
from app.services.field_model import BETA_FLOOR, RadianceField

logger = logging.getLogger(__name__)

DEGENERATE_SPAN = 1e-9
NORMAL_ACC_FLOOR = 1e-3


@dataclass
class RaySamples:
    """Samples along one ray; t in world units from the camera center"""

    t: np.ndarray
    delta: np.ndarray
    points: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None
    color: Optional[np.ndarray] = None
    normal: Optional[np.ndarray] = None
    object_ids: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class RenderOutput:
    """Composited color, depth, normal and opacity for one ray or a batch of rays"""

    color: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    acc: np.ndarray


@dataclass
class RenderImages:
    color: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    acc: np.ndarray


# --- density --------------------------------------------------------------------

def sdf_to_density(beta: float, s):
    """Laplace-CDF density: 1/(2b) exp(-s/b) outside, (1/b)(1 - exp(s/b)/2) inside"""
    if beta < BETA_FLOOR:
        logger.warning(f"beta {beta} below floor, clamped to {BETA_FLOOR}")
        beta = BETA_FLOOR
    s = np.asarray(s, dtype=np.float64)
    decay = np.exp(-np.abs(s) / beta)
    density = np.where(s >= 0, 0.5 * decay, 1.0 - 0.5 * decay) / beta
    return float(density) if density.ndim == 0 else density


def density_var(beta: Var, s: Var) -> Var:
    """Tape form of ``sdf_to_density``; the sign of s is held constant"""
    inv_beta = ad.div(1.0, beta)
    decay = ad.exp(ad.neg(ad.mul(ad.absolute(s), inv_beta)))
    sign = np.sign(s.value)
    return ad.mul(inv_beta, ad.sub(0.5, ad.mul(0.5 * sign, ad.sub(1.0, decay))))


# --- sampling -------------------------------------------------------------------

def stratified_samples_batch(t_near: np.ndarray, t_far: np.ndarray, count: int, jitter: bool = False,
                             rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, np.ndarray]:
    """M samples per ray, one per equal sub-interval

    Returns t and delta of shape (R, M); delta is the gap to the next sample
    and the sub-interval width for the last one. Degenerate spans collapse to
    t_near with zero delta.
    """
    t_near = np.asarray(t_near, dtype=np.float64)
    t_far = np.asarray(t_far, dtype=np.float64)
    span = t_far - t_near
    degenerate = span < DEGENERATE_SPAN
    width = np.where(degenerate, 0.0, span) / count
    if jitter:
        if rng is None:
            raise DataError("Jittered sampling needs a random generator")
        offsets = rng.uniform(size=(len(t_near), count))
    else:
        offsets = np.full((len(t_near), count), 0.5)
    t = t_near[:, None] + (np.arange(count)[None, :] + offsets) * width[:, None]
    t = np.where(degenerate[:, None], t_near[:, None], t)
    delta = np.empty_like(t)
    delta[:, :-1] = np.diff(t, axis=1)
    delta[:, -1] = width
    return t, delta


def stratified_samples(ray: Ray, t_near: float, t_far: float, count: int, jitter: bool = False,
                       rng: Optional[np.random.Generator] = None) -> RaySamples:
    if count < 1:
        raise DataError("Need at least one sample per ray")
    if t_far - t_near < DEGENERATE_SPAN:
        t = np.array([t_near])
        delta = np.array([max(t_far - t_near, 0.0)])
    else:
        t, delta = stratified_samples_batch(np.array([t_near]), np.array([t_far]), count, jitter, rng)
        t, delta = t[0], delta[0]
    return RaySamples(t=t, delta=delta, points=ray.origin + t[:, None] * ray.direction)


# --- compositing ----------------------------------------------------------------

def composite_batch(sigma: np.ndarray, delta: np.ndarray, t: np.ndarray,
                    color: np.ndarray, normal: np.ndarray) -> RenderOutput:
    """Front-to-back compositing of (R, M) samples"""
    alpha = -np.expm1(-sigma * delta)
    transmittance = np.cumprod(1.0 - alpha, axis=-1)
    transmittance = np.concatenate([np.ones_like(alpha[..., :1]), transmittance[..., :-1]], axis=-1)
    weights = transmittance * alpha
    return RenderOutput(
        color=np.sum(weights[..., None] * color, axis=-2),
        depth=np.sum(weights * t, axis=-1),
        normal=np.sum(weights[..., None] * normal, axis=-2),
        acc=np.sum(weights, axis=-1),
    )


def composite_ray(samples: RaySamples) -> RenderOutput:
    count = len(samples)
    color = samples.color if samples.color is not None else np.zeros((count, 3))
    normal = samples.normal if samples.normal is not None else np.zeros((count, 3))
    out = composite_batch(samples.sigma[None], samples.delta[None], samples.t[None], color[None], normal[None])
    return RenderOutput(color=out.color[0], depth=float(out.depth[0]), normal=out.normal[0], acc=float(out.acc[0]))


def composite_vars(sigma: Var, delta: np.ndarray, t: np.ndarray, color: Optional[Var],
                   normal: Optional[Var]) -> Dict[str, Var]:
    """Differentiable compositing; T is the exponential of the exclusive optical-depth sum"""
    tau = ad.mul(sigma, delta)
    alpha = ad.sub(1.0, ad.exp(ad.neg(tau)))
    transmittance = ad.exp(ad.neg(ad.exclusive_cumsum(tau)))
    weights = ad.mul(transmittance, alpha)
    rays, samples = delta.shape
    expanded = ad.reshape(weights, (rays, samples, 1))
    out = {
        "weights": weights,
        "depth": ad.reduce_sum(ad.mul(weights, t), axis=-1),
        "acc": ad.reduce_sum(weights, axis=-1),
    }
    if color is not None:
        out["color"] = ad.reduce_sum(ad.mul(expanded, color), axis=1)
    if normal is not None:
        out["normal"] = ad.reduce_sum(ad.mul(expanded, normal), axis=1)
    return out


# --- rendering fields -------------------------------------------------------------

def sample_instance(field: RadianceField, transform: SimilarityTransform, origins: np.ndarray,
                    directions: np.ndarray, count: int, jitter: bool = False,
                    rng: Optional[np.random.Generator] = None) -> RaySamples:
    """Stratified samples of one placed field along a batch of world rays

    Arrays are (R, M[, 3]); rays missing the placed bbox carry zero density.
    """
    rays = len(origins)
    t_near, t_far, hit = ray_aabb_intersect_batch(origins, directions, transform_box(transform, field.bbox))
    t_near = np.where(hit, t_near, 0.0)
    t_far = np.where(hit, t_far, 0.0)
    t, delta = stratified_samples_batch(t_near, t_far, count, jitter, rng)

    sigma = np.zeros((rays, count))
    color = np.zeros((rays, count, 3))
    normal = np.zeros((rays, count, 3))
    rows = np.flatnonzero(hit)
    if len(rows):
        world = origins[rows, None, :] + t[rows, :, None] * directions[rows, None, :]
        canonical = apply_similarity(transform, world.reshape(-1, 3), inverse=True)
        canonical_dirs = np.repeat(directions[rows] @ transform.rotation, count, axis=0)
        sample = field.evaluate(canonical, canonical_dirs)
        sigma[rows] = sdf_to_density(field.beta, transform.scale * sample.sdf).reshape(len(rows), count)
        color[rows] = sample.color.reshape(len(rows), count, 3)
        normal[rows] = (sample.normal @ transform.rotation.T).reshape(len(rows), count, 3)
    return RaySamples(t=t, delta=delta, sigma=sigma, color=color, normal=normal)


def render_rays(field: RadianceField, transform: SimilarityTransform, origins: np.ndarray,
                directions: np.ndarray, count: int) -> RenderOutput:
    samples = sample_instance(field, transform, origins, directions, count)
    return composite_batch(samples.sigma, samples.delta, samples.t, samples.color, samples.normal)


def merge_samples(per_instance: Sequence[RaySamples]) -> RaySamples:
    """Merge per-object samples by world t

    Callers pass instances sorted by object id; the stable sort then makes the
    merge independent of scene order. Each merged delta is the smaller of the
    gap to the next merged sample and the sample's own stratified delta.
    """
    t = np.concatenate([s.t for s in per_instance], axis=1)
    delta = np.concatenate([s.delta for s in per_instance], axis=1)
    sigma = np.concatenate([s.sigma for s in per_instance], axis=1)
    color = np.concatenate([s.color for s in per_instance], axis=1)
    normal = np.concatenate([s.normal for s in per_instance], axis=1)
    owner = np.concatenate(
        [np.full(s.t.shape, index) for index, s in enumerate(per_instance)], axis=1
    )
    order = np.argsort(t, axis=1, kind="stable")
    take = lambda a: np.take_along_axis(a, order, axis=1)
    take3 = lambda a: np.take_along_axis(a, order[..., None], axis=1)
    t, delta, sigma, owner = take(t), take(delta), take(sigma), take(owner)
    color, normal = take3(color), take3(normal)
    merged = delta.copy()
    merged[:, :-1] = np.minimum(np.diff(t, axis=1), delta[:, :-1])
    return RaySamples(t=t, delta=merged, sigma=sigma, color=color, normal=normal, object_ids=owner)


def composite_scene_rays(scene: SceneGraph, origins: np.ndarray, directions: np.ndarray,
                         count: int) -> RenderOutput:
    instances = sorted(scene.instances, key=lambda instance: instance.object_id)
    per_instance = [
        sample_instance(instance.field, instance.transform, origins, directions, count)
        for instance in instances
    ]
    merged = merge_samples(per_instance)
    return composite_batch(merged.sigma, merged.delta, merged.t, merged.color, merged.normal)


def composite_scene_ray(scene: SceneGraph, ray: Ray, count: int) -> RenderOutput:
    out = composite_scene_rays(scene, ray.origin[None], ray.direction[None], count)
    return RenderOutput(color=out.color[0], depth=float(out.depth[0]), normal=out.normal[0], acc=float(out.acc[0]))


def _render_image(render_chunk, camera: Camera, background, workers: Optional[int], chunk: int) -> RenderImages:
    origins, directions = camera_rays(camera)
    total = len(origins)
    color = np.zeros((total, 3))
    depth = np.zeros(total)
    normal = np.zeros((total, 3))
    acc = np.zeros(total)

    def work(start: int) -> None:
        stop = min(start + chunk, total)
        out = render_chunk(origins[start:stop], directions[start:stop])
        color[start:stop] = out.color
        depth[start:stop] = out.depth
        normal[start:stop] = out.normal
        acc[start:stop] = out.acc

    starts = range(0, total, chunk)
    workers = workers or settings.WORKERS
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, starts))
    else:
        for start in starts:
            work(start)

    background = np.asarray(background, dtype=np.float64)
    final = np.clip(color + (1.0 - acc)[:, None] * background, 0.0, 1.0)
    normal = np.where((acc > NORMAL_ACC_FLOOR)[:, None], normalize(normal), 0.0)
    shape = (camera.height, camera.width)
    return RenderImages(
        color=final.reshape(shape + (3,)), depth=depth.reshape(shape),
        normal=normal.reshape(shape + (3,)), acc=acc.reshape(shape),
    )


def render_view(field: RadianceField, instance: SimilarityTransform, camera: Camera, count: int = 64,
                background=(0.5, 0.5, 0.5), workers: Optional[int] = None, chunk: int = 4096) -> RenderImages:
    """Render one placed field into color, depth, normal and opacity images

    Pixels are split into chunks and rendered on a thread pool; every chunk
    writes its own slice, so images do not depend on the worker count.
    """
    return _render_image(
        lambda o, d: render_rays(field, instance, o, d, count), camera, background, workers, chunk
    )


def render_scene_view(scene: SceneGraph, camera: Optional[Camera] = None, count: int = 64,
                      background=None, workers: Optional[int] = None, chunk: int = 4096) -> RenderImages:
    camera = camera or scene.camera
    if camera is None:
        raise DataError("Scene render needs a camera")
    return _render_image(
        lambda o, d: composite_scene_rays(scene, o, d, count), camera,
        scene.background if background is None else background, workers, chunk,
    )
