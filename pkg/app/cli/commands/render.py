"""
render: images of one or more trained fields from orbit cameras or a view set
"""

import logging
from typing import Optional, Sequence

import click

from app.cli.common import config_options, orbit_ring, parse_sweep, render_cameras, scene_from_checkpoints
from app.models.config import RunConfig
from app.storage.views import load_views

logger = logging.getLogger(__name__)


@click.command("render")
@click.argument("checkpoints", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--out", "-o", "out_dir", default="renders", show_default=True, type=click.Path(file_okay=False))
@click.option("--yaw", type=float, default=0.0, show_default=True, help="Orbit yaw in degrees")
@click.option("--sweep-yaw", help="Render a yaw sweep start:stop:step, e.g. -40:40:20")
@click.option("--views", "views_dir", type=click.Path(file_okay=False), help="Render at the cameras of a view set")
@click.option("--with-acc", is_flag=True, help="Also write opacity images")
@config_options
def render(config: RunConfig, checkpoints: Sequence[str], out_dir: str, yaw: float, sweep_yaw: Optional[str],
           views_dir: Optional[str], with_acc: bool) -> None:
    """Render color, depth and normal images"""
    scene = scene_from_checkpoints(checkpoints, config.render.background)
    if views_dir:
        cameras, yaws = [view.camera for view in load_views(views_dir)], None
    else:
        yaws = parse_sweep(sweep_yaw) if sweep_yaw else [yaw]
        cameras = orbit_ring(scene, config, yaws)
    click.echo(render_cameras(scene, cameras, config, out_dir, with_acc, yaws))
