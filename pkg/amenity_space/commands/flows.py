"""
Flows Command - Origin-Destination Networks and Distance Ranking

Provides:
- flows: one directed network per period group (GML plus node and edge tables)
- rank: amenity specialisation of distance intervals
"""
from pathlib import Path
from typing import Dict, Optional
from amenity_space.config import PipelineConfig
from amenity_space.commands import common
from amenity_space.services.flows import build_flow_networks, distance_rank, interval_shares
from amenity_space.utils.io import (
    read_distances, read_mapped_transactions, read_types, write_csv, write_gml
)
from amenity_space.utils.run_metadata import StageRecorder, record_stage
import logging

logger = logging.getLogger(__name__)

FLOWS_STAGE = "flows"
RANK_STAGE = "rank"


def _load_flows_inputs(output_dir: Path, recorder: StageRecorder, stage: str):
    mapped_path = common.require_artifact(output_dir, common.MAPPED_CSV, stage)
    distances_path = common.require_artifact(output_dir, common.DISTANCES_CSV, stage)
    recorder.input("mapped_transactions", mapped_path)
    recorder.input("distances", distances_path)
    return read_mapped_transactions(mapped_path), read_distances(distances_path)


def run_flows(config: PipelineConfig, output_dir: Path) -> None:
    with record_stage(FLOWS_STAGE, config, output_dir) as recorder:
        records, distances = _load_flows_inputs(output_dir, recorder, FLOWS_STAGE)

        types: Optional[Dict[int, str]] = None
        types_path = Path(output_dir) / common.TYPES_CSV
        if types_path.exists():
            recorder.input("types", str(types_path))
            types = read_types(str(types_path))
        else:
            logger.warning("No types.csv found; flow network nodes carry no cluster type")

        networks = build_flow_networks(
            records, distances, config.periods, types, config.flows.distance_split_km
        )
        for group, network in networks.items():
            files = common.flow_files(group)
            recorder.output(write_gml(network.to_graph(), output_dir / files["gml"]))
            recorder.output(write_csv(network.nodes, output_dir / files["nodes"]))
            recorder.output(write_csv(network.edges, output_dir / files["edges"]))

        recorder.report = {
            group: {
                "n_nodes": len(n.nodes),
                "n_edges": len(n.edges),
                "local": float(n.nodes["size"].sum()),
                "remote": float(n.edges["weight"].sum()),
            }
            for group, n in networks.items()
        }


def run_rank(config: PipelineConfig, output_dir: Path) -> None:
    with record_stage(RANK_STAGE, config, output_dir) as recorder:
        records, distances = _load_flows_inputs(output_dir, recorder, RANK_STAGE)
        matrix, ranking = distance_rank(records, distances, config.rank.top_n)

        recorder.output(write_csv(matrix, output_dir / common.RANK_MATRIX_CSV))
        recorder.output(write_csv(ranking, output_dir / common.RANK_CSV))
        recorder.report = {
            "top_n": config.rank.top_n,
            "interval_shares": {k: float(v) for k, v in interval_shares(records, distances).items()},
        }
