"""
Consumption Complexity Metrics

Handles:
- Count matrices (consumer groups x amenities, clusters x amenities)
- Revealed comparative advantage and its RCA > 1 binarisation
- Co-purchase proximity between amenities
- Relatedness density of every amenity in every cluster and period
"""
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple
from amenity_space.errors import InvalidInputError, SchemaError
import numpy as np
import pandas as pd
import logging

logger = logging.getLogger(__name__)

GROUP_KEYS = {
    "with_shopping_area": ["res_cell", "age_band", "gender", "dest_cluster"],
    "residence_only": ["res_cell", "age_band", "gender"],
}


@dataclass(frozen=True)
class CountMatrix:
    values: np.ndarray
    row_labels: Tuple[str, ...]
    col_labels: Tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape != (len(self.row_labels), len(self.col_labels)):
            raise SchemaError(
                f"count matrix shape {values.shape} does not match labels "
                f"({len(self.row_labels)} x {len(self.col_labels)})"
            )
        if len(set(self.row_labels)) != len(self.row_labels) or len(set(self.col_labels)) != len(self.col_labels):
            raise SchemaError("row and column labels must be unique")
        if (values < 0).any() or not np.isfinite(values).all():
            raise InvalidInputError("counts must be finite and nonnegative")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_frame(
        cls,
        frame: pd.DataFrame,
        row: str,
        col: str,
        value: str = "count",
        rows: Optional[Sequence] = None,
        cols: Optional[Sequence] = None
    ) -> "CountMatrix":
        """Pivot a long table into a count matrix; rows/cols fix the label sets and order."""
        table = frame.groupby([row, col], sort=True)[value].sum().unstack(col, fill_value=0)
        if rows is not None:
            table = table.reindex(index=list(rows), fill_value=0)
        if cols is not None:
            table = table.reindex(columns=list(cols), fill_value=0)
        return cls(
            values=table.to_numpy(dtype=float),
            row_labels=tuple(str(r) for r in table.index),
            col_labels=tuple(str(c) for c in table.columns)
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=list(self.row_labels), columns=list(self.col_labels))


@dataclass(frozen=True)
class SpecializationMatrix:
    rca_values: np.ndarray
    binary: np.ndarray
    row_labels: Tuple[str, ...]
    col_labels: Tuple[str, ...]


@dataclass(frozen=True)
class ProximityMatrix:
    values: np.ndarray
    labels: Tuple[str, ...]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=list(self.labels), columns=list(self.labels))

    def pairs(self) -> pd.DataFrame:
        """Upper-triangle pairs, sorted by phi descending then labels."""
        upper_i, upper_j = np.triu_indices(len(self.labels), k=1)
        frame = pd.DataFrame({
            "amenity_p": [self.labels[i] for i in upper_i],
            "amenity_p_prime": [self.labels[j] for j in upper_j],
            "phi": self.values[upper_i, upper_j],
        })
        return frame.sort_values(["phi", "amenity_p", "amenity_p_prime"],
                                 ascending=[False, True, True], kind="mergesort").reset_index(drop=True)


def _safe_divide(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(np.broadcast(num, den).shape, dtype=float)
    np.divide(num, den, out=out, where=np.broadcast_to(den > 0, out.shape))
    return out


def rca(counts: CountMatrix) -> SpecializationMatrix:
    """
    Revealed comparative advantage of every row unit in every amenity.

    RCA_up = (x_up / sum_p x_up) / (sum_u x_up / sum x). Rows or columns with
    zero total get RCA 0. binary marks RCA strictly above 1.
    """
    x = counts.values
    total = x.sum()
    if total <= 0:
        raise InvalidInputError("Count matrix has no positive entry")

    row_share = _safe_divide(x, x.sum(axis=1, keepdims=True))
    col_share = x.sum(axis=0, keepdims=True) / total
    values = _safe_divide(row_share, col_share)
    return SpecializationMatrix(
        rca_values=values,
        binary=(values > 1.0).astype(np.int8),
        row_labels=counts.row_labels,
        col_labels=counts.col_labels
    )


def proximity(spec: SpecializationMatrix) -> ProximityMatrix:
    """
    Co-purchase proximity phi_pp' = min(P(p | p'), P(p' | p)) over consumer groups.

    Amenities no group specialises in get phi 0 to every other amenity; the
    diagonal is 1.
    """
    m = spec.binary.astype(np.int64)
    if m.shape[1] < 2:
        raise InvalidInputError("Proximity needs at least two amenity columns")

    co = m.T @ m
    ubiquity = np.diag(co).astype(float)
    # min of the two conditionals = co-count over the larger ubiquity
    larger = np.maximum(ubiquity[:, None], ubiquity[None, :])
    both_present = (ubiquity[:, None] > 0) & (ubiquity[None, :] > 0)
    phi = np.where(both_present, _safe_divide(co.astype(float), larger), 0.0)
    np.fill_diagonal(phi, 1.0)
    return ProximityMatrix(values=phi, labels=spec.col_labels)


def relatedness_density(cluster_spec: SpecializationMatrix, prox: ProximityMatrix) -> np.ndarray:
    """
    omega_ip = sum_{p' != p} phi_pp' X_ip' / sum_{p' != p} phi_pp'.

    Amenities with no related amenity (phi_p = 0) get omega 0.

    Returns:
        Array shaped like cluster_spec.binary, values in [0, 1]
    """
    if tuple(cluster_spec.col_labels) != tuple(prox.labels):
        raise SchemaError("Amenity columns of the cluster matrix do not match the proximity labels")

    phi = prox.values.copy()
    np.fill_diagonal(phi, 0.0)
    x = cluster_spec.binary.astype(float)
    numerator = x @ phi
    denominator = phi.sum(axis=0)
    omega = _safe_divide(numerator, denominator[None, :])
    return np.clip(omega, 0.0, 1.0)


def period_year(periods: pd.Series) -> pd.Series:
    return periods.astype(str).str.slice(0, 4).astype(int)


def amenity_labels(records: pd.DataFrame) -> List[str]:
    return sorted(records["amenity_small"].astype(str).unique())


def cluster_counts(
    records: pd.DataFrame,
    period: str,
    clusters: Sequence[int],
    amenities: Sequence[str]
) -> CountMatrix:
    """x_ip for one period over destination-mapped records (residents and visitors alike)."""
    subset = records[records["period"] == period]
    if subset.empty:
        return CountMatrix(
            values=np.zeros((len(clusters), len(amenities))),
            row_labels=tuple(str(c) for c in clusters),
            col_labels=tuple(amenities)
        )
    frame = subset.assign(dest_cluster=subset["dest_cluster"].astype(int))
    matrix = CountMatrix.from_frame(frame, "dest_cluster", "amenity_small", "count",
                                    rows=list(clusters), cols=list(amenities))
    return matrix


def consumer_group_counts(
    records: pd.DataFrame,
    periods: Iterable[str],
    amenities: Sequence[str],
    mode: str = "with_shopping_area"
) -> CountMatrix:
    """Counts of consumer groups x amenities pooled over the given periods."""
    if mode not in GROUP_KEYS:
        raise InvalidInputError(f"Unknown consumer group mode '{mode}'; use one of {sorted(GROUP_KEYS)}")
    subset = records[records["period"].isin(list(periods))]
    if subset.empty:
        raise InvalidInputError("No transactions fall in the proximity baseline periods")
    keys = GROUP_KEYS[mode]
    group = subset[keys].astype(str).agg("|".join, axis=1)
    frame = pd.DataFrame({"group": group.to_numpy(), "amenity_small": subset["amenity_small"].to_numpy(),
                          "count": subset["count"].to_numpy()})
    matrix = CountMatrix.from_frame(frame, "group", "amenity_small", "count", cols=list(amenities))
    logger.info(f"Built {len(matrix.row_labels)} consumer groups ({mode}) over {len(amenities)} amenities")
    return matrix


def baseline_proximity(
    records: pd.DataFrame,
    baseline_periods: Iterable[str],
    amenities: Sequence[str],
    mode: str = "with_shopping_area"
) -> ProximityMatrix:
    groups = consumer_group_counts(records, baseline_periods, amenities, mode)
    return proximity(rca(groups))


def omega_panel(
    records: pd.DataFrame,
    prox: ProximityMatrix,
    periods: Sequence[str],
    clusters: Sequence[int],
    per_period_prox: Optional[dict] = None
) -> pd.DataFrame:
    """
    Relatedness density for every cluster x amenity x period.

    Returns:
        Long table with columns cluster_id, amenity, period, omega
    """
    amenities = list(prox.labels)
    frames = []
    for period in periods:
        counts = cluster_counts(records, period, clusters, amenities)
        period_prox = (per_period_prox or {}).get(period, prox)
        if counts.values.sum() > 0:
            omega = relatedness_density(rca(counts), period_prox)
        else:
            logger.warning(f"No purchases in period {period}; omega set to 0")
            omega = np.zeros(counts.values.shape)
        frames.append(pd.DataFrame({
            "cluster_id": np.repeat(np.asarray(clusters, dtype=int), len(amenities)),
            "amenity": np.tile(amenities, len(clusters)),
            "period": period,
            "omega": omega.ravel(),
        }))
    return pd.concat(frames, ignore_index=True)
