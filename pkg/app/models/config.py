"""
Run configuration models

One validated document describes a run end to end: network shapes, training
schedule, loss weights, curriculum, render settings, metric settings and the
seed. Unknown keys are rejected everywhere.
"""

import hashlib
import json
import math
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class EncodingConfig(StrictModel):
    """Sinusoidal positional encoding of canonical points"""

    frequencies: int = Field(6, ge=1, le=16, description="Number of octaves L")
    omega: float = Field(math.pi, gt=0, description="Base angular frequency")
    include_input: bool = Field(True, description="Prepend the raw coordinates")

    @property
    def width(self) -> int:
        return 3 * (2 * self.frequencies + int(self.include_input))


class ImplicitNetConfig(StrictModel):
    layers: int = Field(8, ge=2, le=16, description="Hidden softplus layers before the two heads")
    hidden: int = Field(64, ge=1, le=1024)
    geometry_features: int = Field(32, ge=1, le=1024, description="Width of the feature head z")
    skip_layers: List[int] = Field(default_factory=list, description="Layers that re-read the network input")

    @model_validator(mode="after")
    def check_skips(self):
        for layer in self.skip_layers:
            if not 1 <= layer < self.layers:
                raise ValueError(f"skip layer {layer} outside 1..{self.layers - 1}")
        return self


class RenderNetConfig(StrictModel):
    layers: int = Field(2, ge=2, le=16)
    hidden: int = Field(64, ge=1, le=1024)


class ConditioningConfig(StrictModel):
    """Trainable stand-ins for the instance-aligned and pixel-aligned features"""

    instance_features: int = Field(32, ge=0, le=1024)
    pixel_features: int = Field(16, ge=0, le=1024)
    feature_height: int = Field(16, ge=2, le=512)
    feature_width: int = Field(16, ge=2, le=512)


class ModelConfig(StrictModel):
    encoding: EncodingConfig = Field(default_factory=EncodingConfig)
    implicit: ImplicitNetConfig = Field(default_factory=ImplicitNetConfig)
    render: RenderNetConfig = Field(default_factory=RenderNetConfig)
    conditioning: ConditioningConfig = Field(default_factory=ConditioningConfig)
    beta_init: float = Field(0.1, ge=1e-4, le=10.0)
    normal_eps: float = Field(1e-3, gt=0, le=0.1)
    sdf_bias_init: float = Field(0.3, description="Initial bias of the SDF head")


class TrainConfig(StrictModel):
    epochs: int = Field(400, ge=1)
    rays: int = Field(64, ge=1, description="Rays per iteration")
    near_points: int = Field(2000, ge=0)
    uniform_points: int = Field(2000, ge=0)
    band: float = Field(0.05, gt=0, description="Std-dev of near-surface offsets")
    lr: float = Field(1e-3, gt=0)
    lr_decay: float = Field(0.2, gt=0, le=1)
    lr_milestones: List[float] = Field(default_factory=lambda: [330 / 400, 370 / 400])
    samples: int = Field(64, ge=1, description="Samples per ray (M)")
    max_iterations_per_epoch: int = Field(4, ge=1)
    jitter: bool = True
    sdf_source: Literal["analytic", "grid"] = "analytic"
    grid_resolution: int = Field(64, ge=2, le=512)

    @field_validator("lr_milestones")
    @classmethod
    def check_milestones(cls, value):
        if any(not 0 < m <= 1 for m in value):
            raise ValueError("lr milestones are epoch fractions in (0, 1]")
        return sorted(value)


class LossConfig(StrictModel):
    weight_3d: float = Field(1.0, ge=0)
    weight_rgb: float = Field(1.0, ge=0)
    weight_depth: float = Field(1.0, ge=0)
    weight_normal: float = Field(1.0, ge=0)
    multiplier: float = Field(1.0, ge=0, description="Ablation knob applied to every 2D loss")
    use_rgb: bool = True
    use_depth: bool = True
    use_normal: bool = True


class CurriculumConfig(StrictModel):
    start_epoch: Optional[int] = Field(None, ge=0, description="Stage-two start; overrides start_fraction")
    start_fraction: float = Field(0.5, ge=0, le=1)
    slope: Optional[float] = Field(None, ge=0, description="Ramp per epoch; derived from the budget when unset")
    cap_rgb: float = Field(1.0, gt=0)
    cap_depth: float = Field(0.5, gt=0)
    cap_normal: float = Field(0.5, gt=0)
    capped: bool = True


class RenderConfig(StrictModel):
    samples: int = Field(64, ge=1)
    background: Tuple[float, float, float] = (0.5, 0.5, 0.5)
    width: int = Field(64, ge=1, le=4096)
    height: int = Field(64, ge=1, le=4096)
    fov: float = Field(40.0, gt=0, lt=180)
    radius: float = Field(3.0, gt=0)
    elevation: float = Field(20.0, ge=-89, le=89)
    workers: Optional[int] = Field(None, ge=1)
    chunk: int = Field(4096, ge=1)

    @field_validator("background")
    @classmethod
    def check_background(cls, value):
        if any(not 0.0 <= c <= 1.0 for c in value):
            raise ValueError("background components must lie in [0, 1]")
        return value


class DataConfig(StrictModel):
    """Ground-truth view generation"""

    views: int = Field(8, ge=1)
    width: int = Field(33, ge=1, le=4096)
    height: int = Field(33, ge=1, le=4096)
    fov: float = Field(40.0, gt=0, lt=180)
    radius: float = Field(3.0, gt=0)
    elevation: float = Field(20.0, ge=-89, le=89)
    shading: Literal["flat", "lambert"] = "lambert"
    ambient: float = Field(0.2, ge=0, le=1)
    light: Tuple[float, float, float] = Field((0.3, 0.8, -0.5), description="Direction toward the light")


class MetricsConfig(StrictModel):
    samples: int = Field(10000, ge=1)
    fscore_mode: Literal["relative", "literal"] = "relative"
    tau: Optional[float] = Field(None, gt=0, description="Explicit F-score threshold")
    chamfer_mode: Literal["mean", "sum"] = "mean"
    normalize: bool = True
    icp: bool = True
    icp_iterations: int = Field(50, ge=1)

    @property
    def threshold(self) -> float:
        if self.tau is not None:
            return self.tau
        return 0.02 if self.fscore_mode == "relative" else 0.002


class RunConfig(StrictModel):
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    curriculum: CurriculumConfig = Field(default_factory=CurriculumConfig)
    render: RenderConfig = Field(default_factory=RenderConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)
    seed: int = Field(0, ge=0)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()
