"""
train: fit one field per scene object and write checkpoints plus loss history
"""

import logging
import os
from typing import Optional

import click
import pandas as pd

from app.cli.common import config_options
from app.cli.schemas import load_scene_document
from app.exceptions import DataError, DivergenceError
from app.models.config import RunConfig
from app.services.ground_truth import GroundTruthObject, generate_views
from app.services.trainer import Trainer
from app.storage.checkpoint import save_field
from app.storage.views import load_views

logger = logging.getLogger(__name__)


def output_paths(out: str, object_id: str, multiple: bool, history: Optional[str]):
    """Checkpoint and CSV paths; several objects get ``<stem>.<id>`` siblings"""
    stem, extension = os.path.splitext(out)
    if multiple:
        stem = f"{stem}.{object_id}"
    checkpoint = stem + (extension or ".ssr")
    if history is None:
        history_path = stem + ".csv"
    elif multiple:
        base, ext = os.path.splitext(history)
        history_path = f"{base}.{object_id}{ext or '.csv'}"
    else:
        history_path = history
    return checkpoint, history_path


def write_history(path: str, history: pd.DataFrame) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    history.to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
    logger.info(f"Wrote loss history {path} ({len(history)} epochs)")


def fit_object(config: RunConfig, target: GroundTruthObject, views, checkpoint: str, history_path: str) -> None:
    try:
        result = Trainer(config, target, views).train()
    except DivergenceError as exc:
        logger.error(f"Training {target.object_id} diverged at epoch {exc.epoch}; saving the last good field")
        if exc.field is not None:
            save_field(checkpoint, exc.field, config, max(exc.epoch - 1, 0), target.transform)
        if exc.history is not None:
            write_history(history_path, exc.history)
        raise
    save_field(checkpoint, result.field, config, result.epochs, target.transform)
    write_history(history_path, result.history)


@click.command("train")
@click.option("--scene", "-s", required=True, help="Built-in scene name or scene document")
@click.option("--data", "data_dir", type=click.Path(file_okay=False), help="View directory from gen-data")
@click.option("--object", "object_id", help="Train only this object")
@click.option("--out", "-o", required=True, type=click.Path(dir_okay=False), help="Checkpoint path (.ssr)")
@click.option("--history", type=click.Path(dir_okay=False), help="Loss CSV path (defaults next to the checkpoint)")
@config_options
def train(config: RunConfig, scene: str, data_dir: Optional[str], object_id: Optional[str], out: str,
          history: Optional[str]) -> None:
    """Train implicit fields on an analytic scene"""
    document = load_scene_document(scene)
    objects = document.ground_truth_objects()
    if object_id is not None:
        objects = [obj for obj in objects if obj.object_id == object_id]
        if not objects:
            raise DataError(f"Scene {document.name} has no object {object_id}")

    if data_dir:
        views = load_views(data_dir)
    else:
        views = generate_views(document.ground_truth_objects(), config.data, document.background)

    multiple = len(objects) > 1
    for target in objects:
        checkpoint, history_path = output_paths(out, target.object_id, multiple, history)
        logger.info(f"Training {target.object_id} -> {checkpoint}")
        fit_object(config, target, views, checkpoint, history_path)
        click.echo(checkpoint)
