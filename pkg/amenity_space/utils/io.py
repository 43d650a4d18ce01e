"""
Delimited-file IO with schema validation

Every reader checks the header, coerces typed columns and reports the first
violation with file, line and column. Writers are deterministic so reruns
produce byte-identical artifacts.
"""
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence
from amenity_space.config import settings
from amenity_space.errors import SchemaError
from amenity_space.schemas import AmenityCluster, ClusterProfile, GeoPoint, StorePoint
import networkx as nx
import pandas as pd
import numpy as np
import json
import logging

logger = logging.getLogger(__name__)

STORE_COLUMNS = ["store_id", "lat", "lon", "category_small", "category_large"]
CELL_COLUMNS = ["cell_id", "lat", "lon"]
TRANSACTION_COLUMNS = ["period", "res_cell", "dest_cell", "amenity_small", "age_band", "gender", "count", "amount"]
PROFILE_COLUMNS = ["cluster_id", "floating_density", "working_density", "residential_density"]
MEMBERSHIP_COLUMNS = ["store_id", "cluster_id"]
CLUSTER_COLUMNS = ["cluster_id", "peak_store", "centroid_lat", "centroid_lon", "n_members", "radius_km"]
MAPPED_TRANSACTION_COLUMNS = TRANSACTION_COLUMNS + ["dest_cluster", "res_cluster"]
OMEGA_COLUMNS = ["cluster_id", "amenity", "period", "omega"]
DISTANCE_COLUMNS = ["dest_cluster", "res_cluster", "distance_km"]
TYPE_COLUMNS = ["cluster_id", "type"]
PANEL_COLUMNS = [
    "dest_cluster", "res_cluster", "amenity", "period", "count", "log_count", "omega",
    "distance_km", "log_dist", "interval", "year", "period_group", "covid", "recovery",
]


def _line_of(position: int) -> int:
    # header is line 1, first data row is line 2
    return int(position) + 2


def read_table(
    path: str,
    columns: Sequence[str],
    numeric: Optional[Dict[str, str]] = None,
    nonempty: Sequence[str] = ()
) -> pd.DataFrame:
    """
    Read a UTF-8 comma-delimited file with a header row.

    Args:
        path: File to read
        columns: Required columns (extra columns are ignored)
        numeric: column -> "float" | "int" | "nonneg_float" | "nonneg_int"
        nonempty: string columns that must not be blank

    Returns:
        DataFrame restricted to `columns`, typed
    """
    file_path = Path(path)
    if not file_path.exists():
        raise SchemaError("file not found", path=str(file_path))

    frame = pd.read_csv(file_path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise SchemaError(f"missing required column(s) {missing}", path=str(file_path), line=1, column=missing[0])
    frame = frame[list(columns)].copy()

    for column in nonempty:
        blank = frame[column].str.strip() == ""
        if blank.any():
            raise SchemaError("value must not be empty", path=str(file_path),
                              line=_line_of(np.flatnonzero(blank.to_numpy())[0]), column=column)

    for column, kind in (numeric or {}).items():
        values = pd.to_numeric(frame[column], errors="coerce")
        bad = values.isna() | ~np.isfinite(values.astype(float))
        if bad.any():
            pos = np.flatnonzero(bad.to_numpy())[0]
            raise SchemaError(f"expected a number, got '{frame[column].iloc[pos]}'",
                              path=str(file_path), line=_line_of(pos), column=column)
        if kind.startswith("nonneg") and (values < 0).any():
            pos = np.flatnonzero((values < 0).to_numpy())[0]
            raise SchemaError("value must be >= 0", path=str(file_path), line=_line_of(pos), column=column)
        if kind.endswith("int"):
            if (values != np.round(values)).any():
                pos = np.flatnonzero((values != np.round(values)).to_numpy())[0]
                raise SchemaError("expected an integer", path=str(file_path), line=_line_of(pos), column=column)
            values = values.astype(np.int64)
        else:
            values = values.astype(float)
        frame[column] = values
    return frame


def _check_unique(frame: pd.DataFrame, column: str, path: str) -> None:
    duplicated = frame[column].duplicated()
    if duplicated.any():
        pos = np.flatnonzero(duplicated.to_numpy())[0]
        raise SchemaError(f"duplicate id '{frame[column].iloc[pos]}'", path=path, line=_line_of(pos), column=column)


def _check_range(frame: pd.DataFrame, path: str) -> None:
    for column, bound in (("lat", 90.0), ("lon", 180.0)):
        out = frame[column].abs() > bound
        if out.any():
            pos = np.flatnonzero(out.to_numpy())[0]
            raise SchemaError(f"coordinate outside [-{bound:g}, {bound:g}]", path=path,
                              line=_line_of(pos), column=column)


def read_stores(path: str) -> List[StorePoint]:
    frame = read_table(path, STORE_COLUMNS, numeric={"lat": "float", "lon": "float"},
                       nonempty=["store_id", "category_small", "category_large"])
    _check_unique(frame, "store_id", path)
    _check_range(frame, path)
    return [
        StorePoint(
            store_id=row.store_id,
            location=GeoPoint(lat=row.lat, lon=row.lon),
            category_small=row.category_small,
            category_large=row.category_large
        )
        for row in frame.itertuples(index=False)
    ]


def read_cells(path: str) -> Dict[str, GeoPoint]:
    frame = read_table(path, CELL_COLUMNS, numeric={"lat": "float", "lon": "float"}, nonempty=["cell_id"])
    _check_unique(frame, "cell_id", path)
    _check_range(frame, path)
    return {row.cell_id: GeoPoint(lat=row.lat, lon=row.lon) for row in frame.itertuples(index=False)}


def read_transactions(path: str) -> pd.DataFrame:
    frame = read_table(
        path, TRANSACTION_COLUMNS,
        numeric={"count": "nonneg_int", "amount": "nonneg_float"},
        nonempty=["period", "res_cell", "dest_cell", "amenity_small", "age_band", "gender"]
    )
    years = pd.to_numeric(frame["period"].str.slice(0, 4), errors="coerce")
    if years.isna().any():
        pos = np.flatnonzero(years.isna().to_numpy())[0]
        raise SchemaError("period must start with a 4-digit year (e.g. 2019-06)", path=path,
                          line=_line_of(pos), column="period")
    return frame


def read_profiles(path: str) -> List[ClusterProfile]:
    frame = read_table(path, PROFILE_COLUMNS, numeric={
        "cluster_id": "int",
        "floating_density": "nonneg_float",
        "working_density": "nonneg_float",
        "residential_density": "nonneg_float",
    })
    _check_unique(frame, "cluster_id", path)
    return [
        ClusterProfile(
            cluster_id=int(row.cluster_id),
            floating_density=float(row.floating_density),
            working_density=float(row.working_density),
            residential_density=float(row.residential_density)
        )
        for row in frame.itertuples(index=False)
    ]


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=settings.CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def _json_default(value: Any) -> Any:
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if hasattr(value, "model_dump"):
        return value.model_dump(mode="json")
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(data: Any, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        json.dump(data, handle, indent=2, sort_keys=True, default=_json_default)
        handle.write("\n")
    return path


def read_json(path: str) -> Any:
    file_path = Path(path)
    if not file_path.exists():
        raise SchemaError("file not found", path=str(file_path))
    with file_path.open(encoding="utf-8") as handle:
        return json.load(handle)


def write_gml(graph: nx.Graph, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nx.write_gml(graph, path, stringizer=str)
    return path


def write_text(text: str, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def read_membership(path: str) -> Dict[str, int]:
    frame = read_table(path, MEMBERSHIP_COLUMNS, numeric={"cluster_id": "int"}, nonempty=["store_id"])
    _check_unique(frame, "store_id", path)
    return {row.store_id: int(row.cluster_id) for row in frame.itertuples(index=False)}


def read_clusters(path: str, membership: Dict[str, int]) -> List[AmenityCluster]:
    frame = read_table(path, CLUSTER_COLUMNS, numeric={
        "cluster_id": "int", "centroid_lat": "float", "centroid_lon": "float",
        "n_members": "nonneg_int", "radius_km": "nonneg_float",
    }, nonempty=["peak_store"])
    _check_unique(frame, "cluster_id", path)
    members: Dict[int, List[str]] = {}
    for store_id, cluster_id in membership.items():
        members.setdefault(cluster_id, []).append(store_id)
    return [
        AmenityCluster(
            cluster_id=int(row.cluster_id),
            peak_store=row.peak_store,
            centroid=GeoPoint(lat=float(row.centroid_lat), lon=float(row.centroid_lon)),
            members=sorted(members.get(int(row.cluster_id), [])),
            radius_km=float(row.radius_km)
        )
        for row in frame.itertuples(index=False)
    ]


def clusters_frame(clusters: Sequence[AmenityCluster]) -> pd.DataFrame:
    return pd.DataFrame({
        "cluster_id": [c.cluster_id for c in clusters],
        "peak_store": [c.peak_store for c in clusters],
        "centroid_lat": [c.centroid.lat for c in clusters],
        "centroid_lon": [c.centroid.lon for c in clusters],
        "n_members": [c.n_members for c in clusters],
        "radius_km": [c.radius_km for c in clusters],
    }, columns=CLUSTER_COLUMNS)


def read_mapped_transactions(path: str) -> pd.DataFrame:
    frame = read_table(path, MAPPED_TRANSACTION_COLUMNS, numeric={
        "count": "nonneg_int", "amount": "nonneg_float", "dest_cluster": "int",
    })
    frame["res_cluster"] = pd.array(
        [int(v) if v != "" else pd.NA for v in frame["res_cluster"]], dtype="Int64"
    )
    return frame


def read_omega(path: str) -> pd.DataFrame:
    return read_table(path, OMEGA_COLUMNS, numeric={"cluster_id": "int", "omega": "float"})


def read_distances(path: str) -> pd.DataFrame:
    return read_table(path, DISTANCE_COLUMNS, numeric={
        "dest_cluster": "int", "res_cluster": "int", "distance_km": "nonneg_float",
    })


def read_types(path: str) -> Dict[int, str]:
    frame = read_table(path, TYPE_COLUMNS, numeric={"cluster_id": "int"}, nonempty=["type"])
    return {int(row.cluster_id): row.type for row in frame.itertuples(index=False)}


def read_panel(path: str) -> pd.DataFrame:
    frame = read_table(path, PANEL_COLUMNS, numeric={
        "dest_cluster": "int", "res_cluster": "int", "count": "nonneg_int", "log_count": "float",
        "omega": "float", "distance_km": "nonneg_float", "log_dist": "float",
        "year": "int", "covid": "int", "recovery": "int",
    })
    return frame
