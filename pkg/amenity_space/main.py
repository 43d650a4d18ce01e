"""
Amenity Space command-line entry point.

Each subcommand runs one pipeline stage (or all of them) and writes its
artifacts plus <stage>.meta.json to the output directory. Domain, config and
schema errors exit with status 2 and a JSON error report; anything else
exits with status 1.
"""
from pathlib import Path
from typing import Callable, Dict, List, Optional
from pydantic import ValidationError
from amenity_space import __version__
from amenity_space.config import PipelineConfig, load_pipeline_config, settings
from amenity_space.commands.clusters import run_detect_clusters
from amenity_space.commands.flows import run_flows, run_rank
from amenity_space.commands.panel import run_build_panel
from amenity_space.commands.pipeline import run_all
from amenity_space.commands.regression import run_fit, run_marginal
from amenity_space.commands.space import run_build_space
from amenity_space.commands.synth import run_synth
from amenity_space.commands.typology import run_typology
from amenity_space.errors import AmenitySpaceError
from amenity_space.schemas import ErrorReport
from amenity_space.utils.io import write_json
import argparse
import json
import logging
import sys

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_ERROR = 2

HANDLERS: Dict[str, Callable[[PipelineConfig, Path, argparse.Namespace], None]] = {
    "detect-clusters": lambda config, out, args: run_detect_clusters(config, out),
    "build-space": lambda config, out, args: run_build_space(config, out),
    "build-panel": lambda config, out, args: run_build_panel(config, out),
    "typology": lambda config, out, args: run_typology(config, out),
    "fit": lambda config, out, args: run_fit(config, out, args.spec),
    "marginal": lambda config, out, args: run_marginal(config, out, args.spec),
    "flows": lambda config, out, args: run_flows(config, out),
    "rank": lambda config, out, args: run_rank(config, out),
    "synth": lambda config, out, args: run_synth(config, out, args.seed),
    "run-all": lambda config, out, args: run_all(config, out),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amenity-space",
        description="Amenity clusters, consumption space and distance-dependent relatedness regressions"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="YAML pipeline config (default: $CONFIG_FILE or built-in defaults)")
    parser.add_argument("--output-dir", help="artifact directory (default: config output_dir or $OUTPUT_DIR)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config key; repeatable")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="default: $LOG_LEVEL")

    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("detect-clusters", help="detect amenity clusters from store coordinates")
    sub.add_parser("build-space", help="map cells, compute proximity and relatedness density")
    sub.add_parser("build-panel", help="assemble the standardised regression panel")
    sub.add_parser("typology", help="k-means cluster types from population profiles")
    for name, text in (("fit", "fit named regression specs"), ("marginal", "marginal effect of omega by distance")):
        command = sub.add_parser(name, help=text)
        command.add_argument("--spec", action="append", default=None, metavar="NAME",
                             help="spec name; repeatable (default: all applicable specs)")
    sub.add_parser("flows", help="origin-destination networks per period group")
    sub.add_parser("rank", help="amenity specialisation by distance interval")
    synth = sub.add_parser("synth", help="generate a synthetic dataset with planted ground truth")
    synth.add_argument("--seed", type=int, default=None, help="generator seed (default: synth.seed)")
    synth.add_argument("--out", help="target directory (default: the output directory)")
    sub.add_parser("run-all", help="run every stage in order")
    return parser


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=getattr(logging, level or settings.LOG_LEVEL),
        format=settings.LOG_FORMAT,
        stream=sys.stderr
    )
    if level:
        logging.getLogger().setLevel(getattr(logging, level))


def _report_error(stage: str, report: ErrorReport, output_dir: Path) -> None:
    sys.stderr.write(json.dumps(report.model_dump(mode="json"), sort_keys=True) + "\n")
    try:
        write_json(report, output_dir / f"{stage}.error.json")
    except OSError as e:
        logger.warning(f"Could not write error report to {output_dir}: {e}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    stage = args.command
    output_dir = Path(args.output_dir or settings.OUTPUT_DIR)

    try:
        config = load_pipeline_config(args.config, args.overrides)
        if args.output_dir:
            config = config.model_copy(update={"output_dir": args.output_dir})
        output_dir = config.resolved_output_dir()
        if stage == "synth" and args.out:
            output_dir = Path(args.out)
        output_dir.mkdir(parents=True, exist_ok=True)
        HANDLERS[stage](config, output_dir, args)
    except AmenitySpaceError as e:
        details = e.to_dict()
        report = ErrorReport(
            stage=stage,
            error_code=details.pop("error_code"),
            detail=details.pop("detail"),
            extra=details
        )
        logger.error(f"{stage} failed: {report.detail}")
        _report_error(stage, report, output_dir)
        return EXIT_ERROR
    except ValidationError as e:
        report = ErrorReport(
            stage=stage,
            error_code="validation_error",
            detail=str(e),
            extra={"errors": json.loads(e.json())}
        )
        logger.error(f"{stage} failed validation: {e.error_count()} error(s)")
        _report_error(stage, report, output_dir)
        return EXIT_ERROR
    except Exception:
        logger.exception(f"{stage} failed unexpectedly")
        return EXIT_UNEXPECTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
