"""
Regression Command - Fixed-Effects Estimation and Marginal Effects

Provides:
- fit: named specifications on the panel, FitResult JSON, coefficient table,
  text regression tables
- marginal: effect of relatedness density along the distance grid
"""
from pathlib import Path
from typing import Dict, List, Optional, Sequence
from amenity_space.config import PipelineConfig
from amenity_space.commands import common
from amenity_space.errors import ConvergenceError, InvalidInputError, RankDeficiencyError, SpecError
from amenity_space.schemas import FitResult, RegressionSpec
from amenity_space.services.fe_regression import fit, marginal_effects
from amenity_space.services.regression_specs import TABLES, get_spec, resolve_specs
from amenity_space.services.reporting import coefficient_frame, curve_frame, format_table
from amenity_space.utils.io import read_json, read_panel, read_types, write_csv, write_json, write_text
from amenity_space.utils.run_metadata import StageRecorder, record_stage
import pandas as pd
import logging

logger = logging.getLogger(__name__)

FIT_STAGE = "fit"
MARGINAL_STAGE = "marginal"

TABLE_HEADINGS = {
    "interaction": "Relatedness density, distance and period interactions",
    "interval": "Relatedness density by distance interval",
    "type": "Relatedness density by destination cluster type",
}

# specs whose coefficients draw a distance curve
CURVE_SPECS = ["eq6_pooled", "eq6_pre_covid", "eq6_covid", "eq6_recovery", "eq7_pooled"]


def load_panel(output_dir: Path, recorder: StageRecorder, stage: str) -> pd.DataFrame:
    panel_path = common.require_artifact(output_dir, common.PANEL_CSV, stage)
    recorder.input("panel", panel_path)
    panel = read_panel(panel_path)
    types_path = Path(output_dir) / common.TYPES_CSV
    if types_path.exists():
        recorder.input("types", str(types_path))
        panel["dest_type"] = panel["dest_cluster"].map(read_types(str(types_path)))
    return panel


def fit_specs(
    specs: Sequence[RegressionSpec],
    panel: pd.DataFrame,
    config: PipelineConfig,
    strict: bool
) -> Dict[str, Optional[FitResult]]:
    """
    Fit each spec in order. With strict=False a spec that cannot be estimated
    on this panel (empty or degenerate sample, collinear design, demeaning
    not converged, no cluster types) is skipped with a warning and maps to None.
    """
    results: Dict[str, Optional[FitResult]] = {}
    for spec in specs:
        try:
            results[spec.name] = fit(spec, panel, config.panel.log_mode, config.panel.distance_offset_km)
        except (InvalidInputError, RankDeficiencyError, SpecError, ConvergenceError) as e:
            if strict:
                raise
            logger.warning(f"Skipped spec {spec.name}: {e}")
            results[spec.name] = None
    return results


def run_fit(config: PipelineConfig, output_dir: Path, spec_names: Optional[List[str]] = None) -> None:
    names = spec_names or config.regression.specs
    # validate names before reading anything
    specs = resolve_specs(names, config.regression.tol, config.regression.max_iter)

    with record_stage(FIT_STAGE, config, output_dir) as recorder:
        panel = load_panel(output_dir, recorder, FIT_STAGE)
        results = fit_specs(specs, panel, config, strict=bool(names))

        fitted = [r for r in results.values() if r is not None]
        if not fitted:
            raise InvalidInputError("No regression spec could be fitted on this panel")
        for result in fitted:
            recorder.output(write_json(result, output_dir / common.fit_json(result.spec.name)))
        coefficients = pd.concat([coefficient_frame(r) for r in fitted], ignore_index=True)
        recorder.output(write_csv(coefficients, output_dir / common.COEFFICIENTS_CSV))

        for table, members in TABLES.items():
            requested = [n for n in members if n in results]
            if not requested:
                continue
            text = format_table(
                [results[n] for n in requested],
                [get_spec(n).title for n in requested],
                heading=TABLE_HEADINGS[table]
            )
            recorder.output(write_text(text, output_dir / common.table_txt(table)))

        recorder.report = {
            "fitted": [r.spec.name for r in fitted],
            "skipped": [n for n, r in results.items() if r is None],
            "n_obs": {r.spec.name: r.n_obs for r in fitted},
        }


def _load_or_fit(name: str, panel: Optional[pd.DataFrame], config: PipelineConfig, output_dir: Path) -> FitResult:
    path = Path(output_dir) / common.fit_json(name)
    if path.exists():
        return FitResult.model_validate(read_json(str(path)))
    spec = get_spec(name, config.regression.tol, config.regression.max_iter)
    return fit(spec, panel, config.panel.log_mode, config.panel.distance_offset_km)


def run_marginal(config: PipelineConfig, output_dir: Path, spec_names: Optional[List[str]] = None) -> None:
    for name in spec_names or []:
        get_spec(name)

    with record_stage(MARGINAL_STAGE, config, output_dir) as recorder:
        if spec_names:
            names, strict = list(spec_names), True
        else:
            names = [n for n in CURVE_SPECS if (Path(output_dir) / common.fit_json(n)).exists()]
            strict = False
            if not names:
                raise SpecError("No fitted spec with a distance interaction; run fit first", CURVE_SPECS)

        panel = None
        if any(not (Path(output_dir) / common.fit_json(n)).exists() for n in names):
            panel = load_panel(output_dir, recorder, MARGINAL_STAGE)

        written = []
        for name in names:
            try:
                result = _load_or_fit(name, panel, config, output_dir)
                curve = marginal_effects(result, config.regression.marginal_grid_km)
            except (InvalidInputError, SpecError) as e:
                if strict:
                    raise
                logger.warning(f"No marginal curve for {name}: {e}")
                continue
            recorder.output(write_csv(curve_frame(curve), output_dir / common.marginal_csv(name)))
            written.append(name)

        recorder.report = {"curves": written, "grid_km": config.regression.marginal_grid_km}
