"""
Regression Panel Builder

Handles:
- Mapping residence and destination cells onto amenity clusters
- Cluster-to-cluster distances and distance-interval tags
- Dense (i, j, p, t) panel assembly with period dummies
- Per-sample standardisation of outcome and regressors
"""
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
from amenity_space.config import PeriodGroups
from amenity_space.errors import DegenerateSampleError, InvalidInputError, MissingKeyError
from amenity_space.schemas import AmenityCluster, CellMappingReport, StandardizationReport, StorePoint, VariableMoments
from amenity_space.services.geo import CellRegistry, SpatialIndex, haversine_matrix
from amenity_space.services.cluster_detection import WALK_REFERENCE_KM
import numpy as np
import pandas as pd
import logging

logger = logging.getLogger(__name__)

DISTANCE_OFFSET_KM = 0.025

INTERVALS = ["0", "(0,1]", "(1,2]", "(2,5]", "(5,10]", "(10,20]", ">20"]
INTERVAL_EDGES_KM = [1.0, 2.0, 5.0, 10.0, 20.0]

# raw column -> standardised column
STANDARDIZED_NAMES = {
    "log_count": "y",
    "omega": "omega_std",
    "log_dist": "log_dist_std",
}

PANEL_KEYS = ["dest_cluster", "res_cluster", "amenity", "period"]


def cell_clusters(
    cells: Sequence[str],
    membership: Mapping[str, int],
    stores: Sequence[StorePoint],
    registry: CellRegistry,
    max_km: float = WALK_REFERENCE_KM
) -> Dict[str, Optional[int]]:
    """Cluster of each cell's nearest assigned store, None beyond max_km."""
    if not membership:
        raise InvalidInputError("Cluster membership is empty")
    if not max_km > 0:
        raise InvalidInputError(f"max_km must be > 0, got {max_km}")

    assigned = [s for s in stores if s.store_id in membership]
    if not assigned:
        raise InvalidInputError("No store of the membership table appears in the store list")
    cells = list(cells)
    if not cells:
        return {}
    registry.require(cells)

    index = SpatialIndex(
        [s.store_id for s in assigned],
        np.array([s.location.lat for s in assigned]),
        np.array([s.location.lon for s in assigned])
    )
    lats, lons = registry.coordinates(cells)
    nearest, distance = index.nearest(lats, lons)
    return {
        cell: int(membership[index.ids[pos]]) if d <= max_km else None
        for cell, pos, d in zip(cells, nearest, distance)
    }


def map_cells_to_clusters(
    records: pd.DataFrame,
    membership: Mapping[str, int],
    stores: Sequence[StorePoint],
    registry: CellRegistry,
    max_km: float = WALK_REFERENCE_KM
) -> Tuple[pd.DataFrame, CellMappingReport]:
    """
    Attach dest_cluster and res_cluster to every transaction record.

    A cell maps to the cluster of its nearest assigned store when that store
    lies within max_km. Records with an unmapped destination are dropped;
    records with an unmapped residence keep res_cluster empty (non-resident
    purchases).
    """
    cells = sorted(set(records["dest_cell"]) | set(records["res_cell"]))
    cell_cluster = cell_clusters(cells, membership, stores, registry, max_km)

    mapped = records.copy()
    mapped["dest_cluster"] = pd.array([cell_cluster[c] for c in mapped["dest_cell"]], dtype="Int64")
    mapped["res_cluster"] = pd.array([cell_cluster[c] for c in mapped["res_cell"]], dtype="Int64")

    dropped = mapped["dest_cluster"].isna()
    mapped = mapped[~dropped].reset_index(drop=True)
    mapped["dest_cluster"] = mapped["dest_cluster"].astype(np.int64)

    n_unmapped = sum(1 for c in cells if cell_cluster[c] is None)
    report = CellMappingReport(
        n_cells=len(cells),
        n_cells_mapped=len(cells) - n_unmapped,
        n_cells_unmapped=n_unmapped,
        n_records_in=len(records),
        n_records_dropped=int(dropped.sum()),
        n_records_non_resident=int(mapped["res_cluster"].isna().sum()),
        max_distance_km=max_km
    )
    if report.n_records_dropped:
        logger.warning(f"Dropped {report.n_records_dropped} records whose destination cell maps to no cluster")
    logger.info(
        f"Mapped {report.n_cells_mapped}/{report.n_cells} cells; "
        f"{report.n_records_non_resident} non-resident records kept for cluster consumption"
    )
    return mapped, report


def cluster_distance_table(clusters: Sequence[AmenityCluster]) -> pd.DataFrame:
    """
    Haversine distance between every ordered pair of cluster centroids.

    Returns:
        Long table dest_cluster, res_cluster, distance_km (0 on the diagonal)
    """
    if not clusters:
        raise InvalidInputError("No clusters to measure distances between")
    ids = np.array([c.cluster_id for c in clusters], dtype=np.int64)
    lats = np.array([c.centroid.lat for c in clusters])
    lons = np.array([c.centroid.lon for c in clusters])
    d = haversine_matrix(lats, lons, lats, lons)
    np.fill_diagonal(d, 0.0)
    return pd.DataFrame({
        "dest_cluster": np.repeat(ids, len(ids)),
        "res_cluster": np.tile(ids, len(ids)),
        "distance_km": d.ravel(),
    })


def interval_of(distance_km) -> np.ndarray:
    """Right-closed distance interval labels; exactly 0 gets its own interval."""
    d = np.atleast_1d(np.asarray(distance_km, dtype=float))
    if (d < 0).any() or not np.isfinite(d).all():
        raise InvalidInputError("Distances must be finite and >= 0")
    # right=True: 1.0 falls in (0,1], 1.0001 in (1,2]
    bins = np.digitize(d, INTERVAL_EDGES_KM, right=True) + 1
    bins[d == 0] = 0
    return np.array(INTERVALS, dtype=object)[bins]


def log_distance(distance_km, offset_km: float = DISTANCE_OFFSET_KM) -> np.ndarray:
    return np.log(np.asarray(distance_km, dtype=float) + offset_km)


def period_dummies(periods: pd.Series, groups: PeriodGroups) -> pd.DataFrame:
    years = periods.astype(str).str.slice(0, 4).astype(int)
    group = years.map(groups.group_of)
    return pd.DataFrame({
        "year": years.to_numpy(),
        "period_group": group.to_numpy(),
        "covid": (group == "covid").astype(np.int8).to_numpy(),
        "recovery": (group == "recovery").astype(np.int8).to_numpy(),
    }, index=periods.index)


def standardize(
    panel: pd.DataFrame,
    columns: Sequence[str],
    sample: str = "panel"
) -> Tuple[pd.DataFrame, StandardizationReport]:
    """
    Z-score the given raw columns on this sample (population sd).

    Output columns follow STANDARDIZED_NAMES (log_count -> y, ...); other
    columns get a "_std" suffix.

    Raises:
        DegenerateSampleError: a column has zero variance in the sample
    """
    if panel.empty:
        raise InvalidInputError(f"Sample '{sample}' is empty")
    out = panel.copy()
    moments: Dict[str, VariableMoments] = {}
    for column in columns:
        values = out[column].to_numpy(dtype=float)
        mean = float(values.mean())
        sd = float(values.std())
        if not sd > 1e-12 * max(1.0, abs(mean)):
            raise DegenerateSampleError(column, sample)
        out[STANDARDIZED_NAMES.get(column, f"{column}_std")] = (values - mean) / sd
        moments[column] = VariableMoments(mean=mean, sd=sd)
    return out, StandardizationReport(sample=sample, n_obs=len(out), moments=moments)


def _panel_periods(resident: pd.DataFrame, periods: Optional[Sequence[str]]) -> List[str]:
    if periods:
        return sorted(periods)
    return sorted(resident["period"].unique())


def build_panel(
    records: pd.DataFrame,
    omega: pd.DataFrame,
    distances: pd.DataFrame,
    groups: PeriodGroups,
    log_mode: str = "log1p",
    offset_km: float = DISTANCE_OFFSET_KM,
    periods: Optional[Sequence[str]] = None,
    dest_types: Optional[Mapping[int, str]] = None
) -> Tuple[pd.DataFrame, StandardizationReport]:
    """
    Assemble the (destination, residence, amenity, period) regression panel.

    Args:
        records: Cluster-mapped transactions (output of map_cells_to_clusters)
        omega: Long table cluster_id, amenity, period, omega
        distances: Output of cluster_distance_table
        groups: Year -> pre-COVID / COVID / recovery mapping
        log_mode: "log1p" completes the panel with zero counts; "log_positive"
            keeps positive observed flows and takes log(count)
        offset_km: Added to every distance before taking logs
        periods: Panel periods; default every period with resident purchases
        dest_types: Optional typology labels per destination cluster

    Returns:
        (panel, pooled StandardizationReport); the panel keeps the raw
        log_count / omega / log_dist columns so every estimation sample can
        standardise on its own rows
    """
    if log_mode not in ("log1p", "log_positive"):
        raise InvalidInputError(f"Unknown log mode '{log_mode}'")

    resident = records[records["res_cluster"].notna()]
    if resident.empty:
        raise InvalidInputError("No record has a residence cell inside a cluster")
    panel_periods = _panel_periods(resident, periods)
    resident = resident[resident["period"].isin(panel_periods)]

    flows = (
        resident.assign(res_cluster=resident["res_cluster"].astype(np.int64))
        .groupby(["dest_cluster", "res_cluster", "amenity_small", "period"], sort=True)["count"].sum()
        .rename_axis(PANEL_KEYS)
    )

    if log_mode == "log1p":
        clusters = sorted(int(c) for c in distances["dest_cluster"].unique())
        amenities = sorted(omega["amenity"].astype(str).unique())
        full_index = pd.MultiIndex.from_product([clusters, clusters, amenities, panel_periods], names=PANEL_KEYS)
        counts = flows.reindex(full_index, fill_value=0)
        panel = counts.rename("count").reset_index()
        panel["log_count"] = np.log1p(panel["count"].to_numpy(dtype=float))
    else:
        counts = flows[flows > 0]
        panel = counts.rename("count").reset_index()
        panel["log_count"] = np.log(panel["count"].to_numpy(dtype=float))

    if panel.empty:
        raise InvalidInputError("Panel has no rows")

    omega_lookup = omega.rename(columns={"cluster_id": "dest_cluster"})[["dest_cluster", "amenity", "period", "omega"]]
    panel = panel.merge(omega_lookup, on=["dest_cluster", "amenity", "period"], how="left", validate="many_to_one")
    if panel["omega"].isna().any():
        row = panel[panel["omega"].isna()].iloc[0]
        raise MissingKeyError(f"({row.dest_cluster}, {row.amenity}, {row.period})", "omega entry")

    panel = panel.merge(distances, on=["dest_cluster", "res_cluster"], how="left", validate="many_to_one")
    if panel["distance_km"].isna().any():
        row = panel[panel["distance_km"].isna()].iloc[0]
        raise MissingKeyError(f"({row.dest_cluster}, {row.res_cluster})", "cluster pair")
    panel["log_dist"] = log_distance(panel["distance_km"], offset_km)
    panel["interval"] = interval_of(panel["distance_km"].to_numpy())

    panel = pd.concat([panel, period_dummies(panel["period"], groups)], axis=1)
    if dest_types is not None:
        panel["dest_type"] = panel["dest_cluster"].map(dest_types)

    panel = panel.sort_values(PANEL_KEYS, kind="mergesort").reset_index(drop=True)
    panel, report = standardize(panel, ["log_count", "omega", "log_dist"], sample="pooled")
    logger.info(f"Built panel: {len(panel)} rows over {len(panel_periods)} periods (log mode {log_mode})")
    return panel, report


def split_by_interval(panel: pd.DataFrame) -> Dict[str, pd.DataFrame]:
    """Partition the panel by distance interval; every label is present, possibly empty."""
    return {label: panel[panel["interval"] == label] for label in INTERVALS}
