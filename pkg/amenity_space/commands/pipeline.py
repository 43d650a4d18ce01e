"""
Pipeline Command - run-all

Runs every stage in order, each reading the artifacts the previous ones
wrote, so the output equals a stage-by-stage run.
"""
from pathlib import Path
from amenity_space.config import PipelineConfig
from amenity_space.commands.clusters import run_detect_clusters
from amenity_space.commands.flows import run_flows, run_rank
from amenity_space.commands.panel import run_build_panel
from amenity_space.commands.regression import run_fit, run_marginal
from amenity_space.commands.space import run_build_space
from amenity_space.commands.typology import run_typology
import logging

logger = logging.getLogger(__name__)

STAGE = "run-all"


def run_all(config: PipelineConfig, output_dir: Path) -> None:
    run_detect_clusters(config, output_dir)
    run_build_space(config, output_dir)
    run_build_panel(config, output_dir)
    if config.inputs.profiles:
        run_typology(config, output_dir)
    else:
        logger.warning("inputs.profiles not set; skipping typology and the per-type regressions")
    run_fit(config, output_dir)
    run_marginal(config, output_dir)
    run_flows(config, output_dir)
    run_rank(config, output_dir)
    logger.info(f"Pipeline finished; artifacts in {output_dir}")
