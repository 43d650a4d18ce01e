"""
Amenity Cluster Detection

Handles:
- Effective number of shops per store (exponentially decayed neighbour count)
- Local peaks of the effective-shop field
- Nearest-peak partition of stores into amenity clusters
"""
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple
from amenity_space.errors import InvalidInputError
from amenity_space.schemas import AmenityCluster, ClusterDetectionReport, GeoPoint, StorePoint
from amenity_space.services.geo import SpatialIndex, haversine_matrix
import numpy as np
import logging
import math

logger = logging.getLogger(__name__)

DEFAULT_GAMMA = 7.58
HALF_LIFE_KM = 0.09144
WALK_REFERENCE_KM = 0.8047

_TIE_RTOL = 1e-12
_CHUNK = 2048


@dataclass(frozen=True)
class DensityField:
    store_ids: Tuple[str, ...]
    scores: np.ndarray
    gamma: float
    cutoff_km: float
    include_self: bool = True
    truncation_bound: float = 0.0

    def score(self, store_id: str) -> float:
        return float(self.scores[self.store_ids.index(store_id)])


@dataclass
class ClusterPartition:
    clusters: List[AmenityCluster]
    unassigned: List[str]
    membership: Dict[str, int] = field(default_factory=dict)

    @property
    def mean_radius_km(self) -> float:
        return float(np.mean([c.radius_km for c in self.clusters])) if self.clusters else 0.0

    @property
    def median_radius_km(self) -> float:
        return float(np.median([c.radius_km for c in self.clusters])) if self.clusters else 0.0


def decay_kernel(distance_km, gamma: float = DEFAULT_GAMMA):
    """Influence weight exp(-gamma * d) of a shop d km away."""
    return np.exp(-gamma * np.asarray(distance_km, dtype=float))


def _coordinates(stores: Sequence[StorePoint]) -> Tuple[np.ndarray, np.ndarray]:
    return (
        np.array([s.location.lat for s in stores], dtype=float),
        np.array([s.location.lon for s in stores], dtype=float),
    )


def _is_tie(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) <= _TIE_RTOL * np.maximum(np.abs(a), np.abs(b))


def effective_density(
    stores: Sequence[StorePoint],
    gamma: float = DEFAULT_GAMMA,
    cutoff_km: float = 2.0,
    include_self: bool = True
) -> DensityField:
    """
    Effective number of shops A_a = sum_b exp(-gamma * d_ab) over stores within cutoff_km.

    Args:
        stores: Store set (nonempty)
        gamma: Decay rate per km
        cutoff_km: Truncation radius; math.inf sums over every pair
        include_self: Count the store itself (contributes exactly 1)

    Returns:
        DensityField aligned with the input order, with the truncation error
        bound N * exp(-gamma * cutoff_km)
    """
    if not stores:
        raise InvalidInputError("Store list is empty")
    if not gamma > 0:
        raise InvalidInputError(f"gamma must be > 0, got {gamma}")
    if not cutoff_km > 0:
        raise InvalidInputError(f"cutoff_km must be > 0, got {cutoff_km}")

    lats, lons = _coordinates(stores)
    n = len(stores)
    scores = np.empty(n, dtype=float)

    if math.isinf(cutoff_km):
        for start in range(0, n, _CHUNK):
            d = haversine_matrix(lats[start:start + _CHUNK], lons[start:start + _CHUNK], lats, lons)
            scores[start:start + _CHUNK] = decay_kernel(d, gamma).sum(axis=1)
        bound = 0.0
    else:
        index = SpatialIndex([s.store_id for s in stores], lats, lons)
        _, distances = index.query_radius_positions(lats, lons, cutoff_km)
        for a, d in enumerate(distances):
            scores[a] = decay_kernel(d, gamma).sum()
        bound = n * math.exp(-gamma * cutoff_km)

    if not include_self:
        scores -= 1.0

    logger.info(f"Effective density over {n} stores: max A={scores.max():.3f}, truncation bound={bound:.3e}")
    return DensityField(
        store_ids=tuple(s.store_id for s in stores),
        scores=scores,
        gamma=gamma,
        cutoff_km=cutoff_km,
        include_self=include_self,
        truncation_bound=bound
    )


def _check_alignment(density: DensityField, stores: Sequence[StorePoint]) -> None:
    if tuple(s.store_id for s in stores) != density.store_ids:
        raise InvalidInputError("Density field was computed over a different store list")


def find_peaks(
    density: DensityField,
    stores: Sequence[StorePoint],
    peak_radius_km: float,
    min_score: float = 0.0
) -> List[str]:
    """
    Stores whose effective-shop score is maximal within peak_radius_km.

    Equal scores are ordered by store id, so no two peaks lie within
    peak_radius_km of each other. Stores scoring below min_score are skipped.

    Returns:
        Peak store ids sorted by score descending, then id
    """
    _check_alignment(density, stores)
    if not peak_radius_km > 0:
        raise InvalidInputError(f"peak_radius_km must be > 0, got {peak_radius_km}")

    lats, lons = _coordinates(stores)
    ids = np.array(density.store_ids, dtype=object)
    scores = density.scores
    index = SpatialIndex(list(density.store_ids), lats, lons)
    neighbourhoods, _ = index.query_radius_positions(lats, lons, peak_radius_km)

    peaks = []
    for a, nb in enumerate(neighbourhoods):
        if scores[a] < min_score:
            continue
        nb = nb[nb != a]
        if len(nb):
            tie = _is_tie(scores[nb], scores[a])
            higher = (scores[nb] > scores[a]) & ~tie
            tie_wins = tie & (ids[nb] < ids[a])
            if (higher | tie_wins).any():
                continue
        peaks.append(a)

    peaks.sort(key=lambda p: (-scores[p], density.store_ids[p]))
    logger.info(f"Found {len(peaks)} peaks (radius {peak_radius_km} km, min score {min_score})")
    return [density.store_ids[p] for p in peaks]


def assign_clusters(
    stores: Sequence[StorePoint],
    peaks: Sequence[str],
    density: DensityField,
    max_assign_km: float = WALK_REFERENCE_KM
) -> ClusterPartition:
    """
    Assign every store to the peak with the largest decayed influence within max_assign_km.

    Ties go to the peak with the larger score, then the smaller id. Stores
    farther than max_assign_km from every peak are reported as unassigned.
    Cluster ids follow the peak order (1 = strongest peak).
    """
    _check_alignment(density, stores)
    if not peaks:
        raise InvalidInputError("No peaks to assign stores to")
    if not max_assign_km > 0:
        raise InvalidInputError(f"max_assign_km must be > 0, got {max_assign_km}")

    position = {sid: i for i, sid in enumerate(density.store_ids)}
    missing = [p for p in peaks if p not in position]
    if missing:
        raise InvalidInputError(f"Peak {missing[0]} is not in the store list")

    # strongest peak first; rank doubles as the tie-break order
    order = sorted(peaks, key=lambda p: (-density.scores[position[p]], p))
    peak_pos = np.array([position[p] for p in order])

    lats, lons = _coordinates(stores)
    n = len(stores)
    choice = np.full(n, -1, dtype=int)
    chosen_d = np.full(n, np.nan)
    for start in range(0, n, _CHUNK):
        d = haversine_matrix(lats[start:start + _CHUNK], lons[start:start + _CHUNK],
                             lats[peak_pos], lons[peak_pos])
        masked = np.where(d <= max_assign_km, d, np.inf)
        best = masked.min(axis=1)
        # first column reaching the minimum is the highest-ranked tied peak
        near_best = np.isfinite(masked) & (masked <= best[:, None] * (1 + _TIE_RTOL) + 1e-15)
        rows = np.flatnonzero(np.isfinite(best))
        picked = near_best[rows].argmax(axis=1)
        choice[start + rows] = picked
        chosen_d[start + rows] = d[rows, picked]

    clusters: List[AmenityCluster] = []
    membership: Dict[str, int] = {}
    for rank, peak_id in enumerate(order):
        members_pos = np.flatnonzero(choice == rank)
        if len(members_pos) == 0:
            continue
        cluster_id = rank + 1
        members = sorted(density.store_ids[m] for m in members_pos)
        for m in members:
            membership[m] = cluster_id
        clusters.append(AmenityCluster(
            cluster_id=cluster_id,
            peak_store=peak_id,
            centroid=GeoPoint(lat=float(lats[members_pos].mean()), lon=float(lons[members_pos].mean())),
            members=members,
            radius_km=float(chosen_d[members_pos].max())
        ))

    unassigned = sorted(density.store_ids[u] for u in np.flatnonzero(choice < 0))
    if unassigned:
        logger.warning(f"{len(unassigned)} stores lie farther than {max_assign_km} km from every peak")
    logger.info(f"Partitioned {n - len(unassigned)} stores into {len(clusters)} clusters")
    return ClusterPartition(clusters=clusters, unassigned=unassigned, membership=membership)


def detect_clusters(
    stores: Sequence[StorePoint],
    gamma: float = DEFAULT_GAMMA,
    cutoff_km: float = 2.0,
    peak_radius_km: float = 0.2,
    max_assign_km: float = WALK_REFERENCE_KM,
    min_peak_score: float = 0.0,
    include_self: bool = True
) -> Tuple[DensityField, List[str], ClusterPartition, ClusterDetectionReport]:
    """Run density, peak finding and assignment in sequence."""
    density = effective_density(stores, gamma=gamma, cutoff_km=cutoff_km, include_self=include_self)
    peaks = find_peaks(density, stores, peak_radius_km, min_score=min_peak_score)
    if not peaks:
        raise InvalidInputError(
            f"No store reaches the minimum peak score {min_peak_score}; lower clusters.min_peak_score"
        )
    partition = assign_clusters(stores, peaks, density, max_assign_km)
    report = ClusterDetectionReport(
        n_stores=len(stores),
        n_peaks=len(peaks),
        n_clusters=len(partition.clusters),
        n_unassigned=len(partition.unassigned),
        unassigned=partition.unassigned,
        mean_radius_km=partition.mean_radius_km,
        median_radius_km=partition.median_radius_km,
        truncation_bound=density.truncation_bound,
        gamma=gamma,
        cutoff_km=cutoff_km
    )
    return density, peaks, partition, report
