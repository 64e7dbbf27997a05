"""
Two-stage loss curriculum and learning-rate schedule

Stage one trains on 3D supervision only. From the start epoch on, each 2D loss
weight ramps linearly with the epoch and saturates at its cap.
"""

from dataclasses import dataclass, replace
from typing import Sequence

from app.exceptions import ConfigError
from app.models.config import CurriculumConfig, LossConfig


@dataclass(frozen=True)
class LossWeights:
    weight_3d: float = 1.0
    weight_rgb: float = 1.0
    weight_depth: float = 1.0
    weight_normal: float = 1.0
    multiplier: float = 1.0

    def __post_init__(self):
        if min(self.weight_3d, self.weight_rgb, self.weight_depth, self.weight_normal, self.multiplier) < 0:
            raise ConfigError("Loss weights must be non-negative")

    @property
    def uses_2d(self) -> bool:
        return max(self.weight_rgb, self.weight_depth, self.weight_normal) > 0

    def as_dict(self) -> dict:
        return {
            "weight_3d": self.weight_3d, "weight_rgb": self.weight_rgb,
            "weight_depth": self.weight_depth, "weight_normal": self.weight_normal,
        }


@dataclass(frozen=True)
class CurriculumSchedule:
    start_epoch: float
    slope: float
    cap_rgb: float = 1.0
    cap_depth: float = 0.5
    cap_normal: float = 0.5
    capped: bool = True

    def __post_init__(self):
        if self.start_epoch < 0 or self.slope < 0:
            raise ConfigError("Curriculum start epoch and slope must be non-negative")
        if min(self.cap_rgb, self.cap_depth, self.cap_normal) <= 0:
            raise ConfigError("Curriculum caps must be positive")

    def ramp(self, epoch: float, cap: float) -> float:
        if epoch <= self.start_epoch:
            return 0.0
        value = self.slope * (epoch - self.start_epoch)
        return min(cap, value) if self.capped else value


def curriculum_weights(schedule: CurriculumSchedule, weights: LossWeights, epoch: float) -> LossWeights:
    """Effective weights at a (1-based) epoch; the 3D weight never changes"""
    if epoch < 0:
        raise ConfigError(f"Epoch must be non-negative, got {epoch}")
    scale = weights.multiplier
    return replace(
        weights,
        weight_rgb=schedule.ramp(epoch, schedule.cap_rgb) * weights.weight_rgb * scale,
        weight_depth=schedule.ramp(epoch, schedule.cap_depth) * weights.weight_depth * scale,
        weight_normal=schedule.ramp(epoch, schedule.cap_normal) * weights.weight_normal * scale,
        multiplier=1.0,
    )


def schedule_from_config(cfg: CurriculumConfig, epochs: int) -> CurriculumSchedule:
    """Resolve the start epoch and the default slope 2 * cap_rgb / remaining epochs"""
    start = cfg.start_epoch if cfg.start_epoch is not None else round(cfg.start_fraction * epochs)
    slope = cfg.slope
    if slope is None:
        slope = 2.0 * cfg.cap_rgb / max(epochs - start, 1)
    return CurriculumSchedule(
        start_epoch=start, slope=slope, cap_rgb=cfg.cap_rgb, cap_depth=cfg.cap_depth,
        cap_normal=cfg.cap_normal, capped=cfg.capped,
    )


def weights_from_config(cfg: LossConfig) -> LossWeights:
    """Base weights with disabled 2D losses zeroed"""
    return LossWeights(
        weight_3d=cfg.weight_3d,
        weight_rgb=cfg.weight_rgb if cfg.use_rgb else 0.0,
        weight_depth=cfg.weight_depth if cfg.use_depth else 0.0,
        weight_normal=cfg.weight_normal if cfg.use_normal else 0.0,
        multiplier=cfg.multiplier,
    )


def learning_rate(base_lr: float, epoch: int, epochs: int, milestones: Sequence[float], decay: float) -> float:
    """Step decay by ``decay`` once the epoch passes each milestone fraction of the budget"""
    passed = sum(1 for fraction in milestones if epoch > fraction * epochs)
    return base_lr * decay ** passed
