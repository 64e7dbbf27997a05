"""
Object-level scene edits

An edit script is plain text with one command per line::

    # comments and blank lines are ignored
    translate chair1 0.5 0 0
    rotate sofa z 30
    duplicate chair1 chair2 1 0 0
    remove lamp
    import lamp from scene_b.ssr --transform 1 0 0 --rotate y 90 --scale 0.5

Commands run in order against an immutable SceneGraph; each returns a new
scene. Duplicates alias the source instance's field.
"""

import logging
import os
import shlex
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.exceptions import DataError
from app.models.geometry import SimilarityTransform, as_vec3, rotation_about_axis
from app.models.scene import SceneGraph, SceneInstance

logger = logging.getLogger(__name__)

InstanceLoader = Callable[[str, str], SceneInstance]


@dataclass(frozen=True)
class Translate:
    object_id: str
    delta: Tuple[float, float, float]


@dataclass(frozen=True)
class Rotate:
    object_id: str
    axis: str
    degrees: float


@dataclass(frozen=True)
class Duplicate:
    source_id: str
    new_id: str
    delta: Tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Remove:
    object_id: str


@dataclass(frozen=True)
class Import:
    """Bring an instance in from another checkpoint or scene file

    Without placement flags the instance keeps the placement stored with it;
    any flag replaces it with scale, then rotation, then translation.
    """

    object_id: str
    source: str
    translation: Optional[Tuple[float, float, float]] = None
    axis: Optional[str] = None
    degrees: float = 0.0
    scale: Optional[float] = None
    new_id: Optional[str] = None

    @property
    def has_placement(self) -> bool:
        return self.translation is not None or self.axis is not None or self.scale is not None

    def placement(self) -> SimilarityTransform:
        rotation = np.eye(3) if self.axis is None else rotation_about_axis(self.axis, self.degrees)
        return SimilarityTransform(rotation, self.translation or (0.0, 0.0, 0.0), self.scale or 1.0)


EditCommand = Union[Translate, Rotate, Duplicate, Remove, Import]


@dataclass(frozen=True)
class EditScript:
    commands: Tuple[EditCommand, ...] = ()
    base_dir: Optional[str] = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.commands)

    def __add__(self, other: "EditScript") -> "EditScript":
        return EditScript(self.commands + other.commands, self.base_dir or other.base_dir)


# --- parsing ----------------------------------------------------------------------

def _floats(tokens: Sequence[str], count: int, line_no: int, what: str) -> Tuple[float, ...]:
    if len(tokens) != count:
        raise DataError(f"Line {line_no}: {what} expects {count} numbers, got {len(tokens)}")
    try:
        return tuple(float(t) for t in tokens)
    except ValueError:
        raise DataError(f"Line {line_no}: {what} has a non-numeric value in {' '.join(tokens)}")


def _parse_import(tokens: List[str], line_no: int) -> Import:
    if len(tokens) < 3 or tokens[1] != "from":
        raise DataError(f"Line {line_no}: expected 'import <id> from <file> [flags]'")
    object_id, source = tokens[0], tokens[2]
    options = {}
    rest = tokens[3:]
    while rest:
        flag = rest.pop(0)
        if flag == "--transform":
            options["translation"] = _floats(rest[:3], 3, line_no, "--transform")
            rest = rest[3:]
        elif flag == "--rotate":
            if len(rest) < 2:
                raise DataError(f"Line {line_no}: --rotate expects an axis and degrees")
            options["axis"] = rest[0].lower()
            options["degrees"] = _floats(rest[1:2], 1, line_no, "--rotate")[0]
            rest = rest[2:]
        elif flag == "--scale":
            options["scale"] = _floats(rest[:1], 1, line_no, "--scale")[0]
            if options["scale"] <= 0:
                raise DataError(f"Line {line_no}: --scale must be positive")
            rest = rest[1:]
        elif flag == "--as":
            if not rest:
                raise DataError(f"Line {line_no}: --as expects an id")
            options["new_id"] = rest.pop(0)
        else:
            raise DataError(f"Line {line_no}: unknown import flag {flag}")
    return Import(object_id, source, **options)


def parse_edit_script(text: str, base_dir: Optional[str] = None) -> EditScript:
    """Parse edit-script text; relative import paths resolve against ``base_dir``"""
    commands: List[EditCommand] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        try:
            tokens = shlex.split(raw, comments=True)
        except ValueError as e:
            raise DataError(f"Line {line_no}: {e}")
        if not tokens:
            continue
        verb, args = tokens[0].lower(), tokens[1:]

        if verb == "translate":
            if len(args) != 4:
                raise DataError(f"Line {line_no}: expected 'translate <id> dx dy dz'")
            commands.append(Translate(args[0], _floats(args[1:], 3, line_no, "translate")))
        elif verb == "rotate":
            if len(args) != 3 or args[1].lower() not in ("x", "y", "z"):
                raise DataError(f"Line {line_no}: expected 'rotate <id> x|y|z degrees'")
            commands.append(Rotate(args[0], args[1].lower(), _floats(args[2:], 1, line_no, "rotate")[0]))
        elif verb == "duplicate":
            if len(args) not in (2, 5):
                raise DataError(f"Line {line_no}: expected 'duplicate <id> <new id> [dx dy dz]'")
            delta = _floats(args[2:], 3, line_no, "duplicate") if len(args) == 5 else (0.0, 0.0, 0.0)
            commands.append(Duplicate(args[0], args[1], delta))
        elif verb == "remove":
            if len(args) != 1:
                raise DataError(f"Line {line_no}: expected 'remove <id>'")
            commands.append(Remove(args[0]))
        elif verb == "import":
            commands.append(_parse_import(args, line_no))
        else:
            raise DataError(f"Line {line_no}: unknown edit command {tokens[0]}")
    return EditScript(tuple(commands), base_dir)


def load_edit_script(path: str) -> EditScript:
    if not os.path.exists(path):
        raise DataError(f"Edit script not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        return parse_edit_script(handle.read(), os.path.dirname(os.path.abspath(path)))


# --- application ------------------------------------------------------------------

def translate_instance(instance: SceneInstance, delta) -> SceneInstance:
    shift = SimilarityTransform(np.eye(3), as_vec3(delta), 1.0)
    return instance.placed(shift.compose(instance.transform))


def rotate_instance(instance: SceneInstance, axis, degrees: float) -> SceneInstance:
    """Rotate about the instance's world bounding-box center"""
    pivot = instance.world_bbox.center
    rotation = rotation_about_axis(axis, degrees)
    about_pivot = SimilarityTransform(rotation, pivot - rotation @ pivot, 1.0)
    return instance.placed(about_pivot.compose(instance.transform))


def apply_edit(scene: SceneGraph, command: EditCommand, loader: Optional[InstanceLoader] = None,
               base_dir: Optional[str] = None) -> SceneGraph:
    if isinstance(command, Translate):
        return scene.replace_instance(translate_instance(scene.get(command.object_id), command.delta))
    if isinstance(command, Rotate):
        return scene.replace_instance(rotate_instance(scene.get(command.object_id), command.axis, command.degrees))
    if isinstance(command, Duplicate):
        source = scene.get(command.source_id)
        if command.new_id in scene:
            raise DataError(f"Cannot duplicate {command.source_id}: id {command.new_id} already exists")
        copy = translate_instance(SceneInstance(command.new_id, source.field, source.transform), command.delta)
        return scene.add(copy)
    if isinstance(command, Remove):
        return scene.remove(command.object_id)
    if isinstance(command, Import):
        if loader is None:
            raise DataError("Import commands need an instance loader")
        path = command.source
        if base_dir and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        instance = loader(path, command.object_id)
        new_id = command.new_id or command.object_id
        if new_id in scene:
            raise DataError(f"Cannot import {command.object_id}: id {new_id} already exists")
        transform = command.placement() if command.has_placement else instance.transform
        return scene.add(SceneInstance(new_id, instance.field, transform))
    raise DataError(f"Unsupported edit command: {command!r}")


def apply_edits(scene: SceneGraph, script: EditScript, loader: Optional[InstanceLoader] = None) -> SceneGraph:
    """
    Apply an edit script in order

    Args:
        scene: Starting scene
        script: Parsed commands
        loader: Resolves (path, object id) to a SceneInstance for import commands

    Returns:
        The edited scene; the input scene is left untouched
    """
    for command in script.commands:
        scene = apply_edit(scene, command, loader, script.base_dir)
        logger.debug(f"Applied {command}")
    if script.commands:
        logger.info(f"Applied {len(script)} edits; scene now holds {list(scene.object_ids)}")
    return scene
