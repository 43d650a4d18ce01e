"""
Panel Command - Regression Panel Assembly

Provides:
- Cluster centroid distance table
- Dense (destination, residence, amenity, period) panel with pooled z-scores
"""
from pathlib import Path
from amenity_space.config import PipelineConfig
from amenity_space.commands import common
from amenity_space.services.panel_builder import STANDARDIZED_NAMES, build_panel, cluster_distance_table
from amenity_space.utils.io import (
    PANEL_COLUMNS, read_clusters, read_mapped_transactions, read_membership, read_omega,
    write_csv, write_json
)
from amenity_space.utils.run_metadata import record_stage
import logging

logger = logging.getLogger(__name__)

STAGE = "build-panel"


def run_build_panel(config: PipelineConfig, output_dir: Path) -> None:
    with record_stage(STAGE, config, output_dir) as recorder:
        paths = {
            "mapped_transactions": common.require_artifact(output_dir, common.MAPPED_CSV, STAGE),
            "omega": common.require_artifact(output_dir, common.OMEGA_CSV, STAGE),
            "clusters": common.require_artifact(output_dir, common.CLUSTERS_CSV, STAGE),
            "membership": common.require_artifact(output_dir, common.MEMBERSHIP_CSV, STAGE),
        }
        for name, path in paths.items():
            recorder.input(name, path)

        records = read_mapped_transactions(paths["mapped_transactions"])
        omega = read_omega(paths["omega"])
        clusters = read_clusters(paths["clusters"], read_membership(paths["membership"]))

        distances = cluster_distance_table(clusters)
        params = config.panel
        panel, report = build_panel(
            records, omega, distances, config.periods,
            log_mode=params.log_mode,
            offset_km=params.distance_offset_km,
            periods=params.periods
        )

        columns = PANEL_COLUMNS + list(STANDARDIZED_NAMES.values())
        recorder.output(write_csv(distances, output_dir / common.DISTANCES_CSV))
        recorder.output(write_csv(panel[columns], output_dir / common.PANEL_CSV))
        recorder.output(write_json(report, output_dir / common.STANDARDIZATION_JSON))
        recorder.report = {
            "n_rows": len(panel),
            "n_clusters": len(clusters),
            "periods": sorted(panel["period"].unique()),
            "log_mode": params.log_mode,
        }
