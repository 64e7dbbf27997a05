"""
Scene graph: placed object instances sharing immutable fields
"""

from dataclasses import dataclass, field, replace
from typing import Any, Iterator, Optional, Tuple

from app.exceptions import DataError
from app.models.geometry import Aabb, Camera, SimilarityTransform, transform_box


@dataclass(frozen=True)
class SceneInstance:
    """One object placed in the world by a canonical-to-world similarity"""

    object_id: str
    field: Any
    transform: SimilarityTransform = field(default_factory=SimilarityTransform.identity)

    @property
    def canonical_bbox(self) -> Aabb:
        return self.field.bbox

    @property
    def world_bbox(self) -> Aabb:
        return transform_box(self.transform, self.field.bbox)

    def placed(self, transform: SimilarityTransform) -> "SceneInstance":
        return replace(self, transform=transform)


@dataclass(frozen=True)
class SceneGraph:
    instances: Tuple[SceneInstance, ...] = ()
    camera: Optional[Camera] = None
    background: Tuple[float, float, float] = (0.5, 0.5, 0.5)

    def __post_init__(self):
        instances = tuple(self.instances)
        ids = [instance.object_id for instance in instances]
        if len(set(ids)) != len(ids):
            raise DataError(f"Scene object ids must be unique: {ids}")
        object.__setattr__(self, "instances", instances)
        object.__setattr__(self, "background", tuple(float(c) for c in self.background))

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[SceneInstance]:
        return iter(self.instances)

    def __contains__(self, object_id: str) -> bool:
        return any(instance.object_id == object_id for instance in self.instances)

    @property
    def object_ids(self) -> Tuple[str, ...]:
        return tuple(instance.object_id for instance in self.instances)

    def get(self, object_id: str) -> SceneInstance:
        for instance in self.instances:
            if instance.object_id == object_id:
                return instance
        raise DataError(f"Unknown object id: {object_id}")

    def replace_instance(self, instance: SceneInstance) -> "SceneGraph":
        self.get(instance.object_id)
        instances = tuple(instance if i.object_id == instance.object_id else i for i in self.instances)
        return replace(self, instances=instances)

    def add(self, instance: SceneInstance) -> "SceneGraph":
        if instance.object_id in self:
            raise DataError(f"Object id already in scene: {instance.object_id}")
        return replace(self, instances=self.instances + (instance,))

    def remove(self, object_id: str) -> "SceneGraph":
        self.get(object_id)
        return replace(self, instances=tuple(i for i in self.instances if i.object_id != object_id))

    def world_bounds(self) -> Aabb:
        if not self.instances:
            raise DataError("Empty scene has no bounds")
        box = self.instances[0].world_bbox
        for instance in self.instances[1:]:
            box = box.union(instance.world_bbox)
        return box
