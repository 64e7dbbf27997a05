"""
Document schemas for the command line: analytic scene specs and run configs

Scene documents and run configs are JSON or YAML files validated by pydantic
models that reject unknown keys.
"""

import json
import logging
import os
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import yaml
from pydantic import Field, ValidationError, model_validator

from app.exceptions import ConfigError, DataError
from app.models.config import RunConfig, StrictModel
from app.models.geometry import Aabb, SimilarityTransform, rotation_about_axis
from app.models.scene import SceneGraph, SceneInstance
from app.models.sdf import Albedo, AnalyticSdf, box, plane, sphere, torus, union
from app.services.field_model import AnalyticField
from app.services.ground_truth import GroundTruthObject

logger = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]


class AlbedoSpec(StrictModel):
    kind: Literal["constant", "stripe"] = "constant"
    color: Vec3 = (0.8, 0.8, 0.8)
    color2: Vec3 = (0.2, 0.2, 0.2)
    axis: int = Field(1, ge=0, le=2)
    period: float = Field(0.25, gt=0)

    def to_albedo(self) -> Albedo:
        return Albedo(self.kind, tuple(self.color), tuple(self.color2), self.axis, self.period)


class PrimitiveSpec(StrictModel):
    """One analytic primitive; which fields apply depends on ``kind``"""

    kind: Literal["sphere", "box", "torus", "plane", "union"]
    center: Vec3 = (0.0, 0.0, 0.0)
    radius: Optional[float] = Field(None, gt=0)
    half_extents: Optional[Vec3] = None
    major_radius: Optional[float] = Field(None, gt=0)
    minor_radius: Optional[float] = Field(None, gt=0)
    normal: Optional[Vec3] = None
    offset: float = 0.0
    members: List["PrimitiveSpec"] = Field(default_factory=list)
    albedo: AlbedoSpec = Field(default_factory=AlbedoSpec)

    @model_validator(mode="after")
    def check_kind_fields(self):
        required = {
            "sphere": ["radius"], "box": ["half_extents"], "torus": ["major_radius", "minor_radius"],
            "plane": ["normal"], "union": [],
        }[self.kind]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.kind} needs {', '.join(missing)}")
        if self.kind == "union" and not self.members:
            raise ValueError("union needs at least one member")
        if self.half_extents is not None and min(self.half_extents) <= 0:
            raise ValueError("half_extents must be positive")
        return self

    def to_sdf(self) -> AnalyticSdf:
        if self.kind == "union":
            return union(*(member.to_sdf() for member in self.members))
        if self.kind == "sphere":
            sdf = sphere(self.radius, self.center)
        elif self.kind == "box":
            sdf = box(self.half_extents, self.center)
        elif self.kind == "torus":
            sdf = torus(self.major_radius, self.minor_radius, self.center)
        else:
            sdf = plane(self.normal, self.offset)
        return AnalyticSdf(sdf.primitive, self.albedo.to_albedo())


class PlacementSpec(StrictModel):
    """Canonical-to-world similarity: scale, then rotate, then translate"""

    translation: Vec3 = (0.0, 0.0, 0.0)
    axis: Union[Literal["x", "y", "z"], Vec3] = "y"
    degrees: float = 0.0
    scale: float = Field(1.0, gt=0)

    def to_transform(self) -> SimilarityTransform:
        axis = self.axis if isinstance(self.axis, str) else tuple(self.axis)
        return SimilarityTransform(rotation_about_axis(axis, self.degrees), self.translation, self.scale)


class ObjectSpec(StrictModel):
    id: str = Field(..., min_length=1, pattern=r"^[A-Za-z0-9_.-]+$")
    primitive: PrimitiveSpec
    placement: PlacementSpec = Field(default_factory=PlacementSpec)
    half_extent: float = Field(1.0, gt=0, description="Half edge of the canonical bounding cube")

    def ground_truth(self) -> GroundTruthObject:
        return GroundTruthObject(self.id, self.primitive.to_sdf(), self.placement.to_transform(),
                                 Aabb.cube(self.half_extent))


class SceneDocument(StrictModel):
    """Analytic scene: objects with placements plus the background color"""

    name: str = "scene"
    objects: List[ObjectSpec] = Field(..., min_length=1)
    background: Vec3 = (0.5, 0.5, 0.5)

    @model_validator(mode="after")
    def check_unique_ids(self):
        ids = [obj.id for obj in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError(f"object ids must be unique: {ids}")
        return self

    def ground_truth_objects(self) -> List[GroundTruthObject]:
        return [obj.ground_truth() for obj in self.objects]

    def analytic_scene(self, beta: float = 0.01) -> SceneGraph:
        """The same scene built from analytic fields, for oracle renders"""
        instances = [
            SceneInstance(obj.id, AnalyticField(gt.sdf, gt.bbox, beta, obj.id), gt.transform)
            for obj, gt in zip(self.objects, self.ground_truth_objects())
        ]
        return SceneGraph(tuple(instances), background=self.background)


BUILTIN_SCENES: Dict[str, Dict[str, Any]] = {
    "sphere": {
        "name": "sphere",
        "objects": [
            {"id": "sphere", "primitive": {"kind": "sphere", "radius": 0.5,
                                           "albedo": {"color": [1.0, 0.0, 0.0]}}},
        ],
    },
    "two-primitive": {
        "name": "two-primitive",
        "objects": [
            {"id": "ball", "primitive": {"kind": "sphere", "radius": 0.8, "albedo": {"color": [0.9, 0.3, 0.2]}},
             "placement": {"translation": [-0.6, 0.0, 0.0], "scale": 0.5}},
            {"id": "crate", "primitive": {"kind": "box", "half_extents": [0.6, 0.6, 0.6],
                                          "albedo": {"kind": "stripe", "color": [0.2, 0.5, 0.9],
                                                     "color2": [0.9, 0.9, 0.3], "period": 0.4}},
             "placement": {"translation": [0.6, 0.0, 0.0], "degrees": 30.0, "scale": 0.5}},
        ],
    },
    "two-spheres": {
        "name": "two-spheres",
        "objects": [
            {"id": "left", "primitive": {"kind": "sphere", "radius": 0.8, "albedo": {"color": [0.9, 0.2, 0.2]}},
             "placement": {"translation": [-0.6, 0.0, 0.0], "scale": 0.5}},
            {"id": "right", "primitive": {"kind": "sphere", "radius": 0.8, "albedo": {"color": [0.2, 0.2, 0.9]}},
             "placement": {"translation": [0.6, 0.0, 0.0], "scale": 0.5}},
        ],
    },
}


# --- document loading -------------------------------------------------------------

def read_document(path: str) -> Any:
    """Parse a JSON or YAML file (by extension; JSON is tried first otherwise)"""
    if not os.path.exists(path):
        raise ConfigError(f"File not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    try:
        if path.lower().endswith((".yaml", ".yml")):
            return yaml.safe_load(text)
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            return yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse {path}: {e}")


def load_scene_document(name_or_path: str) -> SceneDocument:
    """A built-in scene by name or a scene document file"""
    if name_or_path in BUILTIN_SCENES:
        return SceneDocument.model_validate(BUILTIN_SCENES[name_or_path])
    if not os.path.exists(name_or_path):
        raise ConfigError(
            f"Unknown scene {name_or_path!r}; use a file or one of {', '.join(sorted(BUILTIN_SCENES))}"
        )
    try:
        return SceneDocument.model_validate(read_document(name_or_path))
    except ValidationError as e:
        raise DataError(f"Invalid scene document {name_or_path}: {e}")


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(document: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply ``key.path=value`` overrides against the full default-filled document"""
    for override in overrides:
        if "=" not in override:
            raise ConfigError(f"Override must look like key.path=value, got {override!r}")
        path, raw = override.split("=", 1)
        keys = path.strip().split(".")
        node = document
        for depth, key in enumerate(keys):
            if not isinstance(node, dict) or key not in node:
                raise ConfigError(f"Unknown config key: {'.'.join(keys[:depth + 1])}")
            if depth == len(keys) - 1:
                node[key] = _parse_value(raw.strip())
            else:
                node = node[key]
    return document


def load_run_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """Defaults, then the config file, then ``--set`` overrides"""
    try:
        document = RunConfig().model_dump(mode="json")
        if path:
            loaded = read_document(path) or {}
            if not isinstance(loaded, dict):
                raise ConfigError(f"Config {path} must hold a mapping")
            document = RunConfig.model_validate(loaded).model_dump(mode="json")
        config = RunConfig.model_validate(apply_overrides(document, overrides))
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}")
    logger.debug(f"Run config hash {config.config_hash()[:12]}")
    return config
