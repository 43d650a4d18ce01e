"""
Space Command - Consumption Space and Relatedness Density

Provides:
- Cell to cluster mapping of the transaction records
- Proximity between amenities from baseline consumer groups
- Consumption space backbone and pair table
- Relatedness density for every cluster, amenity and period
"""
from pathlib import Path
from typing import Dict, List
from amenity_space.config import PipelineConfig
from amenity_space.commands import common
from amenity_space.errors import InvalidInputError
from amenity_space.services.complexity import (
    ProximityMatrix, amenity_labels, baseline_proximity, omega_panel, period_year
)
from amenity_space.services.consumption_space import consumption_space_export, node_stats_from
from amenity_space.services.geo import CellRegistry
from amenity_space.services.panel_builder import map_cells_to_clusters
from amenity_space.utils.io import (
    read_cells, read_clusters, read_membership, read_stores, read_transactions,
    write_csv, write_gml, write_json
)
from amenity_space.utils.run_metadata import record_stage
import logging

logger = logging.getLogger(__name__)

STAGE = "build-space"


def baseline_periods(records, years: List[int]) -> List[str]:
    periods = records["period"].drop_duplicates()
    chosen = sorted(periods[period_year(periods).isin(years).to_numpy()])
    if not chosen:
        raise InvalidInputError(f"No transactions fall in the proximity baseline years {years}")
    return chosen


def run_build_space(config: PipelineConfig, output_dir: Path) -> None:
    with record_stage(STAGE, config, output_dir) as recorder:
        paths = {name: common.require_input(config, name, STAGE) for name in ("stores", "cells", "transactions")}
        paths["membership"] = common.require_artifact(output_dir, common.MEMBERSHIP_CSV, STAGE)
        paths["clusters"] = common.require_artifact(output_dir, common.CLUSTERS_CSV, STAGE)
        for name, path in paths.items():
            recorder.input(name, path)

        stores = read_stores(paths["stores"])
        registry = CellRegistry(read_cells(paths["cells"]))
        records = read_transactions(paths["transactions"])
        membership = read_membership(paths["membership"])
        clusters = read_clusters(paths["clusters"], membership)
        logger.info(f"Loaded {len(records)} transaction records over {len(registry)} cells")

        mapped, mapping = map_cells_to_clusters(
            records, membership, stores, registry, config.panel.cell_map_max_km
        )

        mode = config.space.consumer_group_mode
        amenities = amenity_labels(mapped)
        baseline = baseline_periods(mapped, config.phi_baseline_years)
        prox = baseline_proximity(mapped, baseline, amenities, mode)
        logger.info(f"Proximity from baseline periods {baseline}: {len(amenities)} amenities")

        per_period: Dict[str, ProximityMatrix] = {}
        periods = sorted(mapped["period"].unique())
        if config.space.phi_per_period:
            for period in periods:
                per_period[period] = baseline_proximity(mapped, [period], amenities, mode)

        categories: Dict[str, str] = {}
        for store in stores:
            categories.setdefault(store.category_small, store.category_large)
        stats = node_stats_from(mapped[mapped["period"].isin(baseline)], categories)
        space = consumption_space_export(prox, stats, config.space.backbone_threshold, config.space.pair_table_k)

        cluster_ids = sorted(c.cluster_id for c in clusters)
        omega = omega_panel(mapped, prox, periods, cluster_ids, per_period or None)

        matrix = prox.to_frame()
        matrix.index.name = "amenity"

        recorder.output(write_csv(mapped, output_dir / common.MAPPED_CSV))
        recorder.output(write_json(mapping, output_dir / common.MAPPING_REPORT_JSON))
        recorder.output(write_csv(space.edges, output_dir / common.PROXIMITY_CSV))
        recorder.output(write_csv(matrix.reset_index(), output_dir / common.PROXIMITY_MATRIX_CSV))
        recorder.output(write_gml(space.backbone, output_dir / common.SPACE_GML))
        recorder.output(write_csv(space.pair_table, output_dir / common.PAIR_TABLE_CSV))
        recorder.output(write_csv(omega, output_dir / common.OMEGA_CSV))
        recorder.report = {
            "mapping": mapping.model_dump(),
            "baseline_periods": baseline,
            "n_amenities": len(amenities),
            "n_edges": len(space.edges),
            "n_backbone_edges": space.backbone.number_of_edges(),
            "phi_per_period": config.space.phi_per_period,
        }
