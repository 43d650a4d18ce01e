"""
Typology Command - Cluster Population Types

Provides:
- k-means typology over floating / working / residential densities
- types table, centroids and restart diagnostics
"""
from pathlib import Path
from amenity_space.config import PipelineConfig
from amenity_space.commands import common
from amenity_space.services.typology import kmeans_typology
from amenity_space.utils.io import read_clusters, read_membership, read_profiles, write_csv, write_json
from amenity_space.utils.run_metadata import record_stage
import logging

logger = logging.getLogger(__name__)

STAGE = "typology"


def run_typology(config: PipelineConfig, output_dir: Path) -> None:
    with record_stage(STAGE, config, output_dir) as recorder:
        profiles_path = common.require_input(config, "profiles", STAGE)
        recorder.input("profiles", profiles_path)
        profiles = read_profiles(profiles_path)

        clusters_path = Path(output_dir) / common.CLUSTERS_CSV
        if clusters_path.exists():
            membership_path = common.require_artifact(output_dir, common.MEMBERSHIP_CSV, STAGE)
            recorder.input("clusters", str(clusters_path))
            known = {c.cluster_id for c in read_clusters(str(clusters_path), read_membership(membership_path))}
            unknown = sorted(p.cluster_id for p in profiles if p.cluster_id not in known)
            if unknown:
                logger.warning(f"Ignoring {len(unknown)} profiles of undetected clusters, e.g. {unknown[:5]}")
                profiles = [p for p in profiles if p.cluster_id in known]

        params = config.typology
        result = kmeans_typology(
            profiles, k=params.k, seed=config.seed, n_restarts=params.n_restarts, max_iter=params.max_iter
        )

        counts = result.labels_frame()["type"].value_counts().sort_index()
        summary = {
            "k": params.k,
            "seed": config.seed,
            "letters": result.letters,
            "best_restart": result.best_restart,
            "inertia": result.inertia,
            "restart_inertia": result.restart_inertia,
            "type_sizes": {str(t): int(n) for t, n in counts.items()},
        }
        recorder.output(write_csv(result.labels_frame(), output_dir / common.TYPES_CSV))
        recorder.output(write_csv(result.centroids_frame(), output_dir / common.TYPOLOGY_CENTROIDS_CSV))
        recorder.output(write_json(summary, output_dir / common.TYPOLOGY_JSON))
        recorder.report = summary
