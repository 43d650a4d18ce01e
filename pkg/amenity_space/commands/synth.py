"""
Synth Command - Synthetic Dataset with Planted Ground Truth

Writes stores, cells, transactions and profiles in the ingestion schemas,
the ground-truth manifest, and a config.yaml that runs the pipeline on them.
"""
from pathlib import Path
from typing import Optional
from amenity_space.config import InputPaths, PipelineConfig, dump_pipeline_config
from amenity_space.services.synth import gen_transactions, gen_world
from amenity_space.utils.io import write_csv, write_json
from amenity_space.utils.run_metadata import record_stage
import pandas as pd
import logging

logger = logging.getLogger(__name__)

STAGE = "synth"

STORES_CSV = "stores.csv"
CELLS_CSV = "cells.csv"
TRANSACTIONS_CSV = "transactions.csv"
PROFILES_CSV = "profiles.csv"
MANIFEST_JSON = "manifest.json"
CONFIG_YAML = "config.yaml"


def run_synth(config: PipelineConfig, out_dir: Path, seed: Optional[int] = None) -> PipelineConfig:
    """
    Generate a synthetic dataset into out_dir.

    Returns:
        The pipeline config written to out_dir/config.yaml
    """
    if seed is not None:
        config = config.model_copy(update={"seed": seed, "synth": config.synth.model_copy(update={"seed": seed})})
    out_dir = Path(out_dir)

    with record_stage(STAGE, config, out_dir) as recorder:
        world = gen_world(config.synth, config.clusters, config.panel.cell_map_max_km)
        records, manifest = gen_transactions(
            world, config.periods, config.panel.distance_offset_km, config.space.consumer_group_mode
        )

        stores = pd.DataFrame({
            "store_id": [s.store_id for s in world.stores],
            "lat": [s.location.lat for s in world.stores],
            "lon": [s.location.lon for s in world.stores],
            "category_small": [s.category_small for s in world.stores],
            "category_large": [s.category_large for s in world.stores],
        })
        cells = pd.DataFrame({
            "cell_id": list(world.cells),
            "lat": [p.lat for p in world.cells.values()],
            "lon": [p.lon for p in world.cells.values()],
        })
        profiles = pd.DataFrame([p.model_dump() for p in world.profiles])

        baseline_years = sorted({int(p[:4]) for p in config.synth.baseline_periods})
        run_config = config.model_copy(update={
            "output_dir": None,
            "inputs": InputPaths(
                stores=STORES_CSV, cells=CELLS_CSV, transactions=TRANSACTIONS_CSV, profiles=PROFILES_CSV
            ),
            "clusters": world.cluster_params,
            "space": config.space.model_copy(update={"phi_baseline_years": baseline_years or None}),
        })

        recorder.output(write_csv(stores, out_dir / STORES_CSV))
        recorder.output(write_csv(cells, out_dir / CELLS_CSV))
        recorder.output(write_csv(records, out_dir / TRANSACTIONS_CSV))
        recorder.output(write_csv(profiles, out_dir / PROFILES_CSV))
        recorder.output(write_json(manifest, out_dir / MANIFEST_JSON))
        dump_pipeline_config(run_config, out_dir / CONFIG_YAML)
        recorder.output(out_dir / CONFIG_YAML)

        recorder.report = {
            "n_stores": len(stores),
            "n_cells": len(cells),
            "n_records": len(records),
            "n_clusters": len(world.cluster_ids),
            "omega_consistent": manifest.omega_consistent,
            "fixed_point_iterations": manifest.fixed_point_iterations,
        }
        logger.info(f"Synthetic dataset written to {out_dir}")
    return run_config
