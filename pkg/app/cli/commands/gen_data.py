"""
gen-data: sphere-trace ground-truth views of an analytic scene
"""

import logging

import click

from app.cli.common import config_options
from app.cli.schemas import load_scene_document
from app.models.config import RunConfig
from app.services.ground_truth import generate_views
from app.storage.views import save_views

logger = logging.getLogger(__name__)


@click.command("gen-data")
@click.option("--scene", "-s", required=True, help="Built-in scene name or scene document")
@click.option("--out", "-o", "out_dir", required=True, type=click.Path(file_okay=False), help="Output view directory")
@config_options
def gen_data(config: RunConfig, scene: str, out_dir: str) -> None:
    """Write color, depth, normal and mask images for a camera ring"""
    document = load_scene_document(scene)
    views = generate_views(document.ground_truth_objects(), config.data, document.background)
    index = save_views(out_dir, views, scene=document.name)
    click.echo(index)
