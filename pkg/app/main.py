"""
Command-line entry point for ShapeSeeker

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical divergence.
"""

import logging
import sys
from typing import Optional, Sequence

import click

from app.cli.commands.compose import compose
from app.cli.commands.evaluate import evaluate
from app.cli.commands.extract import extract
from app.cli.commands.gen_data import gen_data
from app.cli.commands.render import render
from app.cli.commands.train import train
from app.config import settings
from app.exceptions import ConfigError, ShapeSeekerError
from app.utils.logging import setup_logging

# Setup logger
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(settings.APP_VERSION, prog_name=settings.APP_NAME)
@click.option("--log-dir", type=click.Path(file_okay=False), help="Log directory (SHAPESEEKER_LOG_DIR)")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
              help="Log level (SHAPESEEKER_LOG_LEVEL)")
def cli(log_dir: Optional[str], log_level: Optional[str]) -> None:
    """ShapeSeeker: implicit shape and radiance fields from analytic scenes"""
    try:
        settings.validate()
    except ValueError as e:
        raise ConfigError(str(e))
    setup_logging(log_dir, log_level)


cli.add_command(gen_data)
cli.add_command(train)
cli.add_command(render)
cli.add_command(extract)
cli.add_command(compose)
cli.add_command(evaluate)


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and map its outcome to an exit code"""
    try:
        result = cli.main(args=list(argv) if argv is not None else None, prog_name="shapeseeker",
                          standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_USAGE
    except ShapeSeekerError as e:
        logger.error(f"{type(e).__name__}: {e}")
        click.echo(f"Error: {e}", err=True)
        return e.exit_code
    return result if isinstance(result, int) else EXIT_OK


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
