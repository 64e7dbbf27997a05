"""
compose: edit a scene of trained (or analytic) objects, then render it and mesh it
"""

import logging
import os
from typing import Dict, Optional, Sequence

import click

from app.cli.common import config_options, orbit_ring, parse_sweep, render_cameras
from app.cli.schemas import load_scene_document
from app.exceptions import DataError
from app.models.config import RunConfig
from app.models.mesh import TriangleMesh
from app.models.scene import SceneGraph, SceneInstance
from app.services.marching_cubes import marching_cubes
from app.services.mesh_ops import merge_scene_meshes
from app.services.scene_edit import apply_edits, load_edit_script
from app.storage.checkpoint import load_instance
from app.storage.meshes import save_mesh

logger = logging.getLogger(__name__)

CHECKPOINT_EXTENSION = ".ssr"


def load_any_instance(path: str, object_id: str) -> SceneInstance:
    """Instance from a checkpoint, or one object of an analytic scene document"""
    if path.lower().endswith(CHECKPOINT_EXTENSION):
        return load_instance(path, object_id)
    for instance in load_scene_document(path).analytic_scene():
        if instance.object_id == object_id:
            return instance
    raise DataError(f"Scene document {path} has no object {object_id}")


def build_scene(checkpoints: Sequence[str], scene_doc: Optional[str], background) -> SceneGraph:
    instances = [load_instance(path) for path in checkpoints]
    if scene_doc:
        instances.extend(load_scene_document(scene_doc).analytic_scene())
    if not instances:
        raise DataError("compose needs at least one checkpoint or a --scene document")
    return SceneGraph(tuple(instances), background=background)


def scene_mesh(scene: SceneGraph, resolution: int) -> TriangleMesh:
    """World-space mesh of every instance; duplicated instances share one extraction"""
    by_field: Dict[int, TriangleMesh] = {}
    meshes = []
    for instance in scene:
        key = id(instance.field)
        if key not in by_field:
            by_field[key] = marching_cubes(instance.field.sdf, instance.field.bbox, resolution)
        meshes.append(by_field[key])
    return merge_scene_meshes(scene, meshes)


@click.command("compose")
@click.argument("checkpoints", nargs=-1, type=click.Path(dir_okay=False))
@click.option("--scene", "scene_doc", help="Add the objects of an analytic scene document")
@click.option("--edits", "-e", type=click.Path(dir_okay=False), help="Edit script applied in order")
@click.option("--out", "-o", "out_dir", default="composed", show_default=True, type=click.Path(file_okay=False))
@click.option("--yaw", type=float, default=0.0, show_default=True)
@click.option("--sweep-yaw", help="Render a yaw sweep start:stop:step")
@click.option("--res", "resolution", type=click.IntRange(min=2), default=64, show_default=True,
              help="Lattice points per axis for the merged mesh")
@click.option("--mesh-name", default="scene.obj", show_default=True, help="Merged mesh file (.obj or .ply)")
@click.option("--with-acc", is_flag=True)
@config_options
def compose(config: RunConfig, checkpoints: Sequence[str], scene_doc: Optional[str], edits: Optional[str],
            out_dir: str, yaw: float, sweep_yaw: Optional[str], resolution: int, mesh_name: str,
            with_acc: bool) -> None:
    """Compose objects, apply edits, and write renders plus a merged mesh"""
    scene = build_scene(checkpoints, scene_doc, config.render.background)
    if edits:
        scene = apply_edits(scene, load_edit_script(edits), load_any_instance)

    yaws = parse_sweep(sweep_yaw) if sweep_yaw else [yaw]
    render_cameras(scene, orbit_ring(scene, config, yaws), config, out_dir, with_acc, yaws)
    mesh_path = os.path.join(out_dir, mesh_name)
    save_mesh(mesh_path, scene_mesh(scene, resolution))
    click.echo(mesh_path)
