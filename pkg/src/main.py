import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import click
from dotenv import load_dotenv

from src.config import settings
from src.errors import ConfigError, LabError
from src.experiments import run_experiment
from src.schemas import parse_config

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)


def _configure_logging(level: Optional[str]) -> None:
    logging.basicConfig(level=(level or settings.log_level).upper(), format=settings.log_format, force=True)


def _load_config(command: str, path: Optional[Path]) -> Dict[str, Any]:
    if path is None:
        return {"command": command}
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    declared = data.setdefault("command", command)
    if declared != command:
        raise ConfigError(f"{path}: config is for '{declared}', not '{command}'")
    return data


def _run(command: str, config_path: Optional[Path], out: Optional[Path], mesh_level: Optional[int], seed: Optional[int]) -> int:
    """Validate, override and run; returns the process exit code"""
    try:
        config = parse_config(_load_config(command, config_path))
        if mesh_level is not None:
            config = config.with_mesh_level(mesh_level)
        if seed is not None:
            config = config.model_copy(update={"seed": seed})
        out_dir = out or Path(settings.output_dir) / command
        summary = run_experiment(config, out_dir)
    except LabError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        for line in e.detail.get("errors", []):
            click.echo(line, err=True)
        click.echo(f"error: {e.message}", err=True)
        return e.exit_code
    click.echo(f"{command}: {summary.status} ({out_dir / 'summary.json'})")
    return summary.exit_code


def _experiment_command(name: str, help_text: str):
    @click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Experiment config JSON")
    @click.option("--out", type=click.Path(file_okay=False, path_type=Path), help="Output directory")
    @click.option("--mesh-level", type=click.IntRange(min=0), help="Override every mesh level")
    @click.option("--seed", type=int, help="Override the config seed")
    @click.pass_context
    def command(ctx: click.Context, config_path, out, mesh_level, seed):
        ctx.exit(_run(name, config_path, out, mesh_level, seed))

    command.__doc__ = help_text
    return cli.command(name)(command)


@click.group()
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False), help="Overrides settings.log_level")
def cli(log_level: Optional[str]):
    """Morse index and nullity experiments for harmonic maps from S²"""
    _configure_logging(log_level)


_experiment_command("spectrum", "Index and nullity of one map under mesh refinement")
_experiment_command("bubble-run", "Index bounds and energy accounting along a bubbling sequence")
_experiment_command("neck-test", "Neck estimates on long flat cylinders")
_experiment_command("sylvester-test", "Inertia invariance under a change of scalar product")
_experiment_command("embedding-test", "Curvature pairing and isometry of target embeddings")


if __name__ == "__main__":
    cli()
