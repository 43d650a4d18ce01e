"""Artifact names and input resolution shared by the stage commands."""
from pathlib import Path
from amenity_space.config import PipelineConfig
from amenity_space.errors import ConfigError, SchemaError

CLUSTERS_CSV = "clusters.csv"
MEMBERSHIP_CSV = "membership.csv"
UNASSIGNED_CSV = "unassigned.csv"
DENSITY_CSV = "density.csv"
CLUSTER_REPORT_JSON = "cluster_report.json"

MAPPED_CSV = "mapped_transactions.csv"
MAPPING_REPORT_JSON = "mapping_report.json"
PROXIMITY_CSV = "proximity.csv"
PROXIMITY_MATRIX_CSV = "proximity_matrix.csv"
SPACE_GML = "consumption_space.gml"
PAIR_TABLE_CSV = "pair_table.csv"
OMEGA_CSV = "omega.csv"

DISTANCES_CSV = "distances.csv"
PANEL_CSV = "panel.csv"
STANDARDIZATION_JSON = "standardization.json"

TYPES_CSV = "types.csv"
TYPOLOGY_CENTROIDS_CSV = "typology_centroids.csv"
TYPOLOGY_JSON = "typology.json"

COEFFICIENTS_CSV = "coefficients.csv"
RANK_MATRIX_CSV = "distance_rank_matrix.csv"
RANK_CSV = "distance_rank.csv"


def fit_json(spec_name: str) -> str:
    return f"fit_{spec_name}.json"


def marginal_csv(spec_name: str) -> str:
    return f"marginal_{spec_name}.csv"


def table_txt(table: str) -> str:
    return f"table_{table}.txt"


def flow_files(group: str) -> dict:
    return {
        "gml": f"flows_{group}.gml",
        "nodes": f"flows_{group}_nodes.csv",
        "edges": f"flows_{group}_edges.csv",
    }


def require_input(config: PipelineConfig, name: str, stage: str) -> str:
    """Path of a configured input file; it must be set and exist."""
    path = getattr(config.inputs, name)
    if not path:
        raise ConfigError(f"inputs.{name}", f"a file path is required by {stage}")
    if not Path(path).exists():
        raise SchemaError("file not found", path=str(path))
    return path


def require_artifact(output_dir: Path, name: str, stage: str) -> str:
    """Path of an artifact written by an earlier stage."""
    path = Path(output_dir) / name
    if not path.exists():
        raise SchemaError(f"file not found; run the stage that writes {name} before {stage}", path=str(path))
    return str(path)
