"""
Implicit SDF network, rendering network and the field interface used by the renderer
"""

import logging
import math
from abc import ABC, abstractmethod
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from app.exceptions import DataError, ShapeMismatchError
from app.models.config import EncodingConfig, ModelConfig
from app.models.field import Conditioning, FieldSample
from app.models.geometry import Aabb, Camera, as_vec3, orbit_camera, project_points
from app.models.sdf import AnalyticSdf, evaluate_analytic_sdf
from app.services import autodiff as ad
from app.services.autodiff import ParamStore, Tape, Var

logger = logging.getLogger(__name__)

BETA_FLOOR = 1e-4
DEGENERATE_GRADIENT = 1e-8
FALLBACK_NORMAL = np.array([0.0, 0.0, 1.0])


def softplus_inverse(value: float) -> float:
    return float(np.log(np.expm1(value)))


def default_conditioning_camera() -> Camera:
    return orbit_camera(np.zeros(3), 3.0, 0.0, 20.0, 64, 64, 40.0)


# --- encoding and pixel features ----------------------------------------------

def positional_encode(cfg: EncodingConfig, x) -> np.ndarray:
    """[x, sin(2^0 w x), cos(2^0 w x), ..., sin(2^(L-1) w x), cos(2^(L-1) w x)]

    Works on a single point (3,) or a batch (N, 3); each sin/cos block holds
    three components.
    """
    x = np.asarray(x, dtype=np.float64)
    parts = [x] if cfg.include_input else []
    for level in range(cfg.frequencies):
        scaled = (2.0 ** level) * cfg.omega * x
        parts.append(np.sin(scaled))
        parts.append(np.cos(scaled))
    return np.concatenate(parts, axis=-1)


def pixel_feature_weights(camera: Camera, grid_height: int, grid_width: int, points: np.ndarray):
    """Bilinear taps into an (Hf, Wf) feature grid for N points

    Feature nodes sit at pixel centers of a Wf x Hf downsampling of the camera
    image. Returns flat node indices (N, 4), weights (N, 4) and an out-of-view
    flag; out-of-view rows have zero weights.
    """
    uv, in_front = project_points(camera, np.atleast_2d(points))
    u, v = uv[:, 0], uv[:, 1]
    in_view = in_front & (u >= 0) & (u <= camera.width) & (v >= 0) & (v <= camera.height)

    gx = np.clip(u * grid_width / camera.width - 0.5, 0.0, grid_width - 1)
    gy = np.clip(v * grid_height / camera.height - 0.5, 0.0, grid_height - 1)
    x0 = np.clip(np.floor(gx), 0, grid_width - 2).astype(np.int64)
    y0 = np.clip(np.floor(gy), 0, grid_height - 2).astype(np.int64)
    fx = gx - x0
    fy = gy - y0

    index = np.stack([
        y0 * grid_width + x0,
        y0 * grid_width + x0 + 1,
        (y0 + 1) * grid_width + x0,
        (y0 + 1) * grid_width + x0 + 1,
    ], axis=-1)
    weights = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1)
    weights = weights * in_view[:, None]
    return index, weights, ~in_view


def pixel_feature(cond: Conditioning, x) -> Tuple[np.ndarray, bool]:
    """Bilinearly interpolated feature at the projection of x, or zeros when out of view"""
    height, width = cond.grid_shape
    index, weights, out_of_view = pixel_feature_weights(cond.camera, height, width, as_vec3(x)[None])
    flat = cond.features.reshape(height * width, -1)
    if out_of_view[0]:
        logger.debug(f"Point {x} projects outside the conditioning view")
        return np.zeros(flat.shape[1]), True
    return weights[0] @ flat[index[0]], False


# --- parameters -----------------------------------------------------------------

def implicit_input_width(config: ModelConfig) -> int:
    cond = config.conditioning
    return config.encoding.width + cond.instance_features + cond.pixel_features


def expected_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Parameter names and shapes for a model config"""
    implicit, render, cond = config.implicit, config.render, config.conditioning
    input_width = implicit_input_width(config)
    shapes: Dict[str, Tuple[int, ...]] = {}
    fan_in = input_width
    for layer in range(implicit.layers):
        if layer in implicit.skip_layers:
            fan_in += input_width
        shapes[f"implicit.layer{layer}.weight"] = (implicit.hidden, fan_in)
        shapes[f"implicit.layer{layer}.bias"] = (implicit.hidden,)
        fan_in = implicit.hidden
    shapes["implicit.sdf_head.weight"] = (1, implicit.hidden)
    shapes["implicit.sdf_head.bias"] = (1,)
    shapes["implicit.feature_head.weight"] = (implicit.geometry_features, implicit.hidden)
    shapes["implicit.feature_head.bias"] = (implicit.geometry_features,)

    fan_in = 9 + implicit.geometry_features
    for layer in range(render.layers):
        shapes[f"render.layer{layer}.weight"] = (render.hidden, fan_in)
        shapes[f"render.layer{layer}.bias"] = (render.hidden,)
        fan_in = render.hidden
    shapes["render.output.weight"] = (3, render.hidden)
    shapes["render.output.bias"] = (3,)

    shapes["beta"] = (1,)
    if cond.instance_features:
        shapes["latent"] = (1, cond.instance_features)
    if cond.pixel_features:
        shapes["feature_image"] = (cond.feature_height * cond.feature_width, cond.pixel_features)
    return shapes


def init_params(config: ModelConfig, rng: np.random.Generator) -> ParamStore:
    """Uniform +-sqrt(1/fan_in) layers, SDF head biased outward, beta at its configured start"""
    store = ParamStore()
    shapes = expected_shapes(config)
    for name, shape in shapes.items():
        if name == "beta":
            value = np.array([softplus_inverse(config.beta_init - BETA_FLOOR)])
        elif name in ("latent", "feature_image"):
            value = rng.normal(0.0, 0.01, size=shape)
        else:
            layer = name.rsplit(".", 1)[0]
            fan_in = shapes[f"{layer}.weight"][1]
            bound = math.sqrt(1.0 / fan_in)
            value = rng.uniform(-bound, bound, size=shape)
            if name == "implicit.sdf_head.bias":
                value = value + config.sdf_bias_init
        store.add(name, value)
    return store


def check_param_shapes(config: ModelConfig, arrays: Dict[str, np.ndarray]) -> None:
    """Raise ShapeMismatchError naming the first array that does not fit the config"""
    expected = expected_shapes(config)
    for name, shape in expected.items():
        if name not in arrays:
            raise ShapeMismatchError(f"Missing parameter array: {name}", name=name)
        if tuple(arrays[name].shape) != shape:
            raise ShapeMismatchError(
                f"Parameter {name} has shape {tuple(arrays[name].shape)}, config expects {shape}", name=name
            )
    extra = sorted(set(arrays) - set(expected))
    if extra:
        raise ShapeMismatchError(f"Unexpected parameter array: {extra[0]}", name=extra[0])


# --- tape forward passes ----------------------------------------------------------

def beta_var(bound: Dict[str, Var]) -> Var:
    return ad.add(ad.softplus(ad.reshape(bound["beta"], ())), BETA_FLOOR)


def implicit_forward_batch(config: ModelConfig, camera: Camera, bound: Dict[str, Var],
                           points: np.ndarray) -> Tuple[Var, Var, np.ndarray]:
    """SDF (N,) and geometry features (N, d_z) at canonical points"""
    tape = _tape(bound)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    count = len(points)
    cond = config.conditioning

    parts = [tape.const(positional_encode(config.encoding, points))]
    if cond.instance_features:
        parts.append(ad.gather(bound["latent"], np.zeros(count, dtype=np.int64)))
    out_of_view = np.zeros(count, dtype=bool)
    if cond.pixel_features:
        index, weights, out_of_view = pixel_feature_weights(
            camera, cond.feature_height, cond.feature_width, points
        )
        feature = None
        for tap in range(4):
            term = ad.mul(ad.gather(bound["feature_image"], index[:, tap]), weights[:, tap:tap + 1])
            feature = term if feature is None else ad.add(feature, term)
        parts.append(feature)
    network_input = ad.concat(parts, axis=-1) if len(parts) > 1 else parts[0]

    hidden = network_input
    for layer in range(config.implicit.layers):
        if layer in config.implicit.skip_layers:
            hidden = ad.concat([hidden, network_input], axis=-1)
        hidden = ad.softplus(ad.linear(
            hidden, bound[f"implicit.layer{layer}.weight"], bound[f"implicit.layer{layer}.bias"]
        ))
    sdf = ad.linear(hidden, bound["implicit.sdf_head.weight"], bound["implicit.sdf_head.bias"])
    features = ad.linear(hidden, bound["implicit.feature_head.weight"], bound["implicit.feature_head.bias"])
    return ad.reshape(sdf, (count,)), features, out_of_view


def render_forward_batch(config: ModelConfig, bound: Dict[str, Var], points: np.ndarray,
                         directions: np.ndarray, normals: Var, features: Var) -> Var:
    """Colors (N, 3) in (0, 1) from [x, d, n, z]"""
    tape = _tape(bound)
    hidden = ad.concat([tape.const(points), tape.const(directions), normals, features], axis=-1)
    for layer in range(config.render.layers):
        hidden = ad.softplus(ad.linear(
            hidden, bound[f"render.layer{layer}.weight"], bound[f"render.layer{layer}.bias"]
        ))
    return ad.sigmoid(ad.linear(hidden, bound["render.output.weight"], bound["render.output.bias"]))


def fd_offsets(points: np.ndarray, eps: float) -> np.ndarray:
    """Stack [x; x + eps e_k; x - eps e_k] for k = x, y, z"""
    offsets = [points]
    for sign in (1.0, -1.0):
        for axis in range(3):
            shifted = points.copy()
            shifted[:, axis] += sign * eps
            offsets.append(shifted)
    return np.concatenate(offsets, axis=0)


def field_forward(config: ModelConfig, camera: Camera, bound: Dict[str, Var], points: np.ndarray,
                  directions: Optional[np.ndarray] = None, with_normals: bool = True) -> Dict[str, object]:
    """One batched implicit pass plus optional normals and colors

    Normals come from central differences over a single pass on the 7N stacked
    points. Colors need normals and view directions.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    count = len(points)
    if not with_normals:
        sdf, features, out_of_view = implicit_forward_batch(config, camera, bound, points)
        return {"sdf": sdf, "features": features, "out_of_view": out_of_view}

    eps = config.normal_eps
    sdf_all, features_all, oov_all = implicit_forward_batch(config, camera, bound, fd_offsets(points, eps))
    rows = np.arange(count)
    sdf = ad.gather(sdf_all, rows)
    features = ad.gather(features_all, rows)
    columns = []
    for axis in range(3):
        plus = ad.gather(sdf_all, rows + (1 + axis) * count)
        minus = ad.gather(sdf_all, rows + (4 + axis) * count)
        columns.append(ad.reshape(ad.mul(ad.sub(plus, minus), 1.0 / (2.0 * eps)), (count, 1)))
    gradient = ad.concat(columns, axis=-1)
    normals, degenerate = normalize_gradient_var(gradient)

    result = {"sdf": sdf, "features": features, "normals": normals,
              "degenerate": degenerate, "out_of_view": oov_all[:count]}
    if directions is not None:
        result["color"] = render_forward_batch(config, bound, points, directions, normals, features)
    return result


def normalize_gradient_var(gradient: Var) -> Tuple[Var, np.ndarray]:
    magnitude = ad.sqrt(ad.reduce_sum(ad.square(gradient), axis=-1))
    degenerate = magnitude.value < DEGENERATE_GRADIENT
    safe = ad.maximum(magnitude, DEGENERATE_GRADIENT)
    normals = ad.div(gradient, ad.reshape(safe, (len(degenerate), 1)))
    if np.any(degenerate):
        keep = (~degenerate).astype(np.float64)[:, None]
        normals = ad.add(ad.mul(normals, keep), degenerate[:, None] * FALLBACK_NORMAL)
    return normals, degenerate


def _tape(bound: Dict[str, Var]) -> Tape:
    return next(iter(bound.values())).tape


# --- field interface ------------------------------------------------------------

class RadianceField(ABC):
    """Anything the renderer can integrate: SDF, color and normals in a canonical frame"""

    object_id: str
    bbox: Aabb

    @property
    @abstractmethod
    def beta(self) -> float:
        ...

    @abstractmethod
    def sdf(self, points: np.ndarray) -> np.ndarray:
        """Canonical signed distances at (N, 3) points"""

    @abstractmethod
    def evaluate(self, points: np.ndarray, directions: np.ndarray) -> FieldSample:
        """SDF, color and unit normals at (N, 3) canonical points"""


class ObjectField(RadianceField):
    """Learned shape and appearance of one object"""

    def __init__(self, config: ModelConfig, params: ParamStore, camera: Optional[Camera] = None,
                 bbox: Optional[Aabb] = None, object_id: str = "object"):
        check_param_shapes(config, params.params)
        self.config = config
        self.params = params
        self.camera = camera or default_conditioning_camera()
        self.bbox = bbox or Aabb.cube(1.0)
        self.object_id = object_id

    @property
    def beta(self) -> float:
        return float(np.logaddexp(0.0, self.params["beta"][0])) + BETA_FLOOR

    @property
    def conditioning(self) -> Conditioning:
        cond = self.config.conditioning
        latent = self.params["latent"][0] if "latent" in self.params else np.zeros(0)
        if "feature_image" in self.params:
            features = self.params["feature_image"].reshape(cond.feature_height, cond.feature_width, -1)
        else:
            features = np.zeros((cond.feature_height, cond.feature_width, 0))
        return Conditioning(latent, features, self.camera)

    def with_beta(self, beta: float) -> "ObjectField":
        """Copy evaluated at a fixed sharpness"""
        if beta < BETA_FLOOR:
            raise DataError(f"beta must be at least {BETA_FLOOR}, got {beta}")
        params = self.params.copy()
        params.params["beta"][0] = softplus_inverse(max(beta - BETA_FLOOR, 1e-12))
        return ObjectField(self.config, params, self.camera, self.bbox, self.object_id)

    def copy(self) -> "ObjectField":
        return ObjectField(self.config, self.params.copy(), self.camera, self.bbox, self.object_id)

    def bind(self, tape: Tape) -> Dict[str, Var]:
        return self.params.bind(tape)

    def sdf_and_features(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        tape = Tape(requires_grad=False)
        sdf, features, _ = implicit_forward_batch(self.config, self.camera, self.bind(tape), points)
        return sdf.value, features.value

    def sdf(self, points: np.ndarray) -> np.ndarray:
        return self.sdf_and_features(points)[0]

    def evaluate(self, points: np.ndarray, directions: np.ndarray) -> FieldSample:
        tape = Tape(requires_grad=False)
        out = field_forward(self.config, self.camera, self.bind(tape), points, directions)
        return FieldSample(
            sdf=out["sdf"].value, color=out["color"].value, normal=out["normals"].value,
            degenerate=out["degenerate"], out_of_view=out["out_of_view"],
        )


class AnalyticField(RadianceField):
    """An analytic SDF with flat albedo and fixed beta, for oracles and mixed scenes"""

    def __init__(self, sdf: AnalyticSdf, bbox: Optional[Aabb] = None, beta: float = 0.01,
                 object_id: str = "analytic", normal_eps: float = 1e-6):
        if beta < BETA_FLOOR:
            raise DataError(f"beta must be at least {BETA_FLOOR}, got {beta}")
        self.analytic = sdf
        self.bbox = bbox or Aabb.cube(1.0)
        self._beta = float(beta)
        self.object_id = object_id
        self.normal_eps = normal_eps

    @property
    def beta(self) -> float:
        return self._beta

    def with_beta(self, beta: float) -> "AnalyticField":
        return AnalyticField(self.analytic, self.bbox, beta, self.object_id, self.normal_eps)

    def sdf(self, points: np.ndarray) -> np.ndarray:
        return evaluate_analytic_sdf(self.analytic, np.atleast_2d(points))

    def evaluate(self, points: np.ndarray, directions: np.ndarray) -> FieldSample:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        normals, degenerate = finite_difference_normals(self.sdf, points, self.normal_eps)
        return FieldSample(
            sdf=self.sdf(points), color=self.analytic.color(points), normal=normals,
            degenerate=degenerate, out_of_view=np.zeros(len(points), dtype=bool),
        )


# --- single-point operations ----------------------------------------------------

def implicit_forward(field: ObjectField, x) -> Tuple[float, np.ndarray]:
    """(s, z) at one canonical point"""
    sdf, features = field.sdf_and_features(as_vec3(x)[None])
    return float(sdf[0]), features[0]


def finite_difference_normals(sdf_fn: Callable[[np.ndarray], np.ndarray], points: np.ndarray,
                              eps: float = 1e-3) -> Tuple[np.ndarray, np.ndarray]:
    """Central-difference unit normals for any batched SDF; +z where the gradient vanishes"""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    count = len(points)
    values = sdf_fn(fd_offsets(points, eps)).reshape(7, count)
    gradient = (values[1:4] - values[4:7]).T / (2.0 * eps)
    magnitude = np.linalg.norm(gradient, axis=-1)
    degenerate = magnitude < DEGENERATE_GRADIENT
    normals = gradient / np.maximum(magnitude, DEGENERATE_GRADIENT)[:, None]
    normals[degenerate] = FALLBACK_NORMAL
    if np.any(degenerate):
        logger.debug(f"{int(degenerate.sum())} points have a vanishing SDF gradient")
    return normals, degenerate


def finite_difference_normal(field: RadianceField, x, eps: float = 1e-3) -> Tuple[np.ndarray, bool]:
    normals, degenerate = finite_difference_normals(field.sdf, as_vec3(x)[None], eps)
    return normals[0], bool(degenerate[0])


def render_forward(field: ObjectField, x, d, n, z) -> np.ndarray:
    """Color at one point from position, view direction, normal and geometry feature"""
    tape = Tape(requires_grad=False)
    bound = field.bind(tape)
    color = render_forward_batch(
        field.config, bound, as_vec3(x)[None], as_vec3(d)[None],
        tape.const(as_vec3(n)[None]), tape.const(np.asarray(z, dtype=np.float64)[None]),
    )
    return color.value[0]


def init_object_field(config: ModelConfig, rng: np.random.Generator, camera: Optional[Camera] = None,
                      bbox: Optional[Aabb] = None, object_id: str = "object") -> ObjectField:
    return ObjectField(config, init_params(config, rng), camera, bbox, object_id)
