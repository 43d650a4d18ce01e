"""
Clusters Command - Amenity Cluster Detection

Provides:
- Effective shop density per store
- Peak finding and nearest-peak assignment
- clusters / membership / unassigned / density tables and the detection report
"""
from pathlib import Path
from amenity_space.config import PipelineConfig
from amenity_space.commands import common
from amenity_space.services.cluster_detection import detect_clusters
from amenity_space.utils.io import clusters_frame, read_stores, write_csv, write_json
from amenity_space.utils.run_metadata import record_stage
import pandas as pd
import logging

logger = logging.getLogger(__name__)

STAGE = "detect-clusters"


def run_detect_clusters(config: PipelineConfig, output_dir: Path) -> None:
    with record_stage(STAGE, config, output_dir) as recorder:
        stores_path = common.require_input(config, "stores", STAGE)
        recorder.input("stores", stores_path)
        stores = read_stores(stores_path)
        logger.info(f"Loaded {len(stores)} stores from {stores_path}")

        params = config.clusters
        density, _, partition, report = detect_clusters(
            stores,
            gamma=params.gamma,
            cutoff_km=params.cutoff_km,
            peak_radius_km=params.peak_radius_km,
            max_assign_km=params.max_assign_km,
            min_peak_score=params.min_peak_score,
            include_self=params.include_self
        )

        membership = pd.DataFrame(
            sorted(partition.membership.items()), columns=["store_id", "cluster_id"]
        )
        density_table = pd.DataFrame({"store_id": list(density.store_ids), "score": density.scores})

        recorder.output(write_csv(clusters_frame(partition.clusters), output_dir / common.CLUSTERS_CSV))
        recorder.output(write_csv(membership, output_dir / common.MEMBERSHIP_CSV))
        recorder.output(write_csv(
            pd.DataFrame({"store_id": partition.unassigned}, columns=["store_id"]),
            output_dir / common.UNASSIGNED_CSV
        ))
        recorder.output(write_csv(density_table, output_dir / common.DENSITY_CSV))
        recorder.output(write_json(report, output_dir / common.CLUSTER_REPORT_JSON))
        recorder.report = report.model_dump(exclude={"unassigned"})
