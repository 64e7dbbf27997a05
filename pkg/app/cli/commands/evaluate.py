"""
eval: score a predicted mesh (and optionally rendered images) against ground truth
"""

import logging
import os
from typing import Optional

import click
import numpy as np

from app.cli.common import config_options, read_render_index
from app.cli.schemas import SceneDocument, load_scene_document
from app.exceptions import ConfigError, DataError
from app.models.config import RunConfig
from app.models.mesh import TriangleMesh
from app.models.report import EvalReport
from app.models.sdf import evaluate_analytic_sdf
from app.services.marching_cubes import marching_cubes
from app.services.mesh_ops import concatenate_meshes, transform_mesh
from app.services.metrics import depth_normal_error, evaluate_meshes, masked_image_l1
from app.storage.images import read_image
from app.storage.meshes import load_mesh
from app.storage.views import load_views

logger = logging.getLogger(__name__)


def analytic_mesh(document: SceneDocument, object_id: Optional[str], resolution: int, world: bool) -> TriangleMesh:
    """Reference mesh of one object (canonical unless ``world``) or of the whole scene in world space"""
    objects = document.ground_truth_objects()
    if object_id is not None:
        objects = [obj for obj in objects if obj.object_id == object_id]
        if not objects:
            raise DataError(f"Scene {document.name} has no object {object_id}")
    elif len(objects) > 1:
        world = True

    meshes = []
    for obj in objects:
        mesh = marching_cubes(lambda p, sdf=obj.sdf: evaluate_analytic_sdf(sdf, p), obj.bbox, resolution)
        meshes.append(transform_mesh(mesh, obj.transform) if world else mesh)
    return concatenate_meshes(meshes)


def image_errors(renders_dir: str, views_dir: str) -> dict:
    """Mean depth, normal and masked color errors over paired render and view indices"""
    entries = read_render_index(renders_dir)
    views = load_views(views_dir)
    if len(entries) != len(views):
        raise DataError(f"{renders_dir} holds {len(entries)} renders but {views_dir} holds {len(views)} views")
    depth, normal, angular, color = [], [], [], []
    for entry, view in zip(entries, views):
        path = lambda kind: os.path.join(renders_dir, entry[kind])
        mask = view.mask()
        if "acc" in entry:
            mask = mask & (read_image(path("acc"), "depth") > 0.5)
        if not np.any(mask):
            logger.warning(f"View {entry['index']} has no valid pixels; skipped")
            continue
        error = depth_normal_error(
            read_image(path("depth"), "depth"), read_image(path("normal"), "normal"),
            view.depth, view.normal, mask,
        )
        depth.append(error.depth_l1)
        normal.append(error.normal_l1)
        angular.append(error.normal_angular)
        color.append(masked_image_l1(read_image(path("color"), "color"), view.color, mask))
    if not depth:
        raise DataError("No view had pixels to evaluate")
    return {
        "depth_l1": float(np.mean(depth)), "normal_l1": float(np.mean(normal)),
        "normal_angular": float(np.mean(angular)), "image_l1": float(np.mean(color)),
    }


@click.command("eval")
@click.argument("prediction", type=click.Path(dir_okay=False))
@click.option("--gt", "gt_mesh", type=click.Path(dir_okay=False), help="Reference mesh (.obj or .ply)")
@click.option("--scene", "-s", help="Built-in scene or scene document to mesh as the reference")
@click.option("--object", "object_id", help="Reference object within --scene")
@click.option("--world", is_flag=True, help="Place the --scene reference in world coordinates")
@click.option("--gt-res", type=click.IntRange(min=2), default=128, show_default=True,
              help="Lattice points per axis for the analytic reference mesh")
@click.option("--renders", "renders_dir", type=click.Path(file_okay=False), help="Render directory to score")
@click.option("--views", "views_dir", type=click.Path(file_okay=False), help="Ground-truth views for --renders")
@click.option("--out", "-o", type=click.Path(dir_okay=False), help="Write the JSON report here")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), help="Append a CSV row here")
@config_options
def evaluate(config: RunConfig, prediction: str, gt_mesh: Optional[str], scene: Optional[str],
             object_id: Optional[str], world: bool, gt_res: int, renders_dir: Optional[str],
             views_dir: Optional[str], out: Optional[str], csv_path: Optional[str]) -> None:
    """Chamfer distance, F-Score and normal consistency of a mesh"""
    if (gt_mesh is None) == (scene is None):
        raise ConfigError("eval needs exactly one of --gt or --scene")
    if (renders_dir is None) != (views_dir is None):
        raise ConfigError("--renders and --views go together")

    pred = load_mesh(prediction)
    if gt_mesh:
        gt = load_mesh(gt_mesh)
    else:
        gt = analytic_mesh(load_scene_document(scene), object_id, gt_res, world)

    report: EvalReport = evaluate_meshes(pred, gt, config.metrics, np.random.default_rng(config.seed))
    if renders_dir:
        report = report.model_copy(update=image_errors(renders_dir, views_dir))

    if out:
        directory = os.path.dirname(out)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(out, "w", encoding="utf-8") as handle:
            handle.write(report.to_json() + "\n")
    if csv_path:
        report.append_csv(csv_path)
    click.echo(report.to_json())
