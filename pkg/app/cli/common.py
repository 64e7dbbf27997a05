"""
Helpers shared by the subcommands
"""

import functools
import json
import logging
import os
from typing import Dict, List, Optional, Sequence

import click
import numpy as np

from app.cli.schemas import load_run_config
from app.config import settings
from app.exceptions import DataError
from app.models.config import RunConfig
from app.models.geometry import Camera, orbit_camera
from app.models.scene import SceneGraph
from app.services.volrender import RenderImages, render_scene_view
from app.storage.checkpoint import load_instance
from app.storage.images import write_image

logger = logging.getLogger(__name__)

RENDER_INDEX = "renders.json"


def config_options(command):
    """Add ``--config`` and repeatable ``--set key.path=value`` options"""

    @click.option("--config", "-c", "config_path", type=click.Path(dir_okay=False),
                  help="Run configuration (JSON or YAML)")
    @click.option("--set", "overrides", multiple=True, metavar="KEY.PATH=VALUE",
                  help="Override one config value; repeatable")
    @functools.wraps(command)
    def wrapper(*args, config_path: Optional[str] = None, overrides: Sequence[str] = (), **kwargs):
        return command(*args, config=load_run_config(config_path, overrides), **kwargs)

    return wrapper


def parse_sweep(text: str) -> List[float]:
    """``start:stop:step`` in degrees, both ends included"""
    try:
        start, stop, step = (float(part) for part in text.split(":"))
    except ValueError:
        raise click.BadParameter(f"expected start:stop:step, got {text!r}", param_hint="--sweep-yaw")
    if step <= 0 or stop < start:
        raise click.BadParameter("sweep needs step > 0 and stop >= start", param_hint="--sweep-yaw")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [start + i * step for i in range(count)]


def scene_from_checkpoints(paths: Sequence[str], background=(0.5, 0.5, 0.5)) -> SceneGraph:
    if not paths:
        raise DataError("At least one checkpoint is required")
    return SceneGraph(tuple(load_instance(path) for path in paths), background=background)


def orbit_ring(scene: SceneGraph, config: RunConfig, yaws: Sequence[float]) -> List[Camera]:
    """Cameras orbiting the scene bounds center at the configured radius"""
    render = config.render
    target = scene.world_bounds().center
    return [
        orbit_camera(target, render.radius, yaw, render.elevation, render.width, render.height, render.fov)
        for yaw in yaws
    ]


def write_render(directory: str, index: int, images: RenderImages, with_acc: bool = False) -> Dict[str, str]:
    stem = f"view_{index:03d}"
    files = {"color": f"{stem}_color.ppm", "depth": f"{stem}_depth.pfm", "normal": f"{stem}_normal.pfm"}
    write_image(os.path.join(directory, files["color"]), "color", images.color)
    write_image(os.path.join(directory, files["depth"]), "depth", images.depth)
    write_image(os.path.join(directory, files["normal"]), "normal", images.normal)
    if with_acc:
        files["acc"] = f"{stem}_acc.pfm"
        write_image(os.path.join(directory, files["acc"]), "depth", images.acc)
    return files


def render_cameras(scene: SceneGraph, cameras: Sequence[Camera], config: RunConfig, directory: str,
                   with_acc: bool = False, yaws: Optional[Sequence[float]] = None) -> str:
    """Render every camera into ``directory`` and write the renders.json index"""
    os.makedirs(directory, exist_ok=True)
    workers = config.render.workers or settings.WORKERS
    entries = []
    for index, camera in enumerate(cameras):
        images = render_scene_view(scene, camera, config.render.samples, workers=workers, chunk=config.render.chunk)
        entry = {"index": index, "camera": camera.to_dict(), **write_render(directory, index, images, with_acc)}
        if yaws is not None:
            entry["yaw"] = yaws[index]
        entries.append(entry)
        logger.info(f"Rendered view {index + 1}/{len(cameras)}")

    index_path = os.path.join(directory, RENDER_INDEX)
    with open(index_path, "w", encoding="utf-8") as handle:
        json.dump({"object_ids": list(scene.object_ids), "views": entries}, handle, indent=2, sort_keys=True)
    return index_path


def read_render_index(directory: str) -> List[dict]:
    path = os.path.join(directory, RENDER_INDEX)
    if not os.path.exists(path):
        raise DataError(f"No {RENDER_INDEX} in {directory}")
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)["views"]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DataError(f"Malformed {path}: {e}")
