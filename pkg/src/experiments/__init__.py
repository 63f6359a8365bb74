import logging
from pathlib import Path
from typing import Callable, Dict

from src import artifacts
from src.experiments import bubbles, embedding, neck, spectrum, sylvester
from src.experiments.context import RunContext
from src.schemas import ExperimentConfig, ExperimentSummary

logger = logging.getLogger(__name__)

RUNNERS: Dict[str, Callable[[ExperimentConfig, RunContext], None]] = {
    "spectrum": spectrum.run,
    "bubble-run": bubbles.run,
    "neck-test": neck.run,
    "sylvester-test": sylvester.run,
    "embedding-test": embedding.run,
}


def run_experiment(config: ExperimentConfig, out_dir: Path) -> ExperimentSummary:
    """Run one experiment, writing resolved_config.json, its tables and summary.json into out_dir"""
    out_dir = Path(out_dir)
    ctx = RunContext(command=config.command, out_dir=out_dir, seed=config.seed)
    ctx.json("resolved_config", config.model_dump(mode="json"))
    logger.info(f"Running {config.command} into {out_dir}")
    RUNNERS[config.command](config, ctx)
    summary = ctx.summary()
    artifacts.write_json(out_dir / "summary.json", summary)
    counts = {status: sum(a.status == status for a in summary.assertions) for status in ("PASS", "FAIL", "AMBIGUOUS")}
    logger.info(f"{config.command} finished with {summary.status}: {counts}")
    return summary
