"""
extract: marching-cubes mesh of a trained field
"""

import logging

import click

from app.models.config import RunConfig
from app.services.marching_cubes import marching_cubes
from app.services.mesh_ops import transform_mesh
from app.storage.checkpoint import load_field
from app.storage.meshes import save_mesh

logger = logging.getLogger(__name__)


@click.command("extract")
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.option("--res", "resolution", type=click.IntRange(min=2), default=64, show_default=True,
              help="Lattice points per axis")
@click.option("--out", "-o", required=True, type=click.Path(dir_okay=False), help="Mesh path (.obj or .ply)")
@click.option("--world", is_flag=True, help="Apply the stored placement instead of keeping canonical coordinates")
def extract(checkpoint: str, resolution: int, out: str, world: bool) -> None:
    """Extract the zero level set of a checkpoint as a triangle mesh"""
    field, info = load_field(checkpoint)
    config: RunConfig = info.config
    mesh = marching_cubes(field.sdf, field.bbox, resolution, normal_eps=config.model.normal_eps)
    if world:
        mesh = transform_mesh(mesh, info.transform)
    save_mesh(out, mesh)
    logger.info(f"Extracted {len(mesh.vertices)} vertices and {len(mesh.faces)} faces from {checkpoint}")
    click.echo(out)
