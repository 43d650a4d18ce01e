"""
Geodesic geometry and spatial lookup

Handles:
- Great-circle (haversine) distances, scalar and vectorised
- Exact radius queries and nearest-neighbour lookup over a store set
- The grid-cell registry (cell id -> centroid)
"""
from sklearn.neighbors import BallTree
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple
from amenity_space.errors import InvalidInputError, MissingKeyError
from amenity_space.schemas import GeoPoint
import numpy as np
import logging
import math

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088

# BallTree candidates are re-checked with haversine_matrix; the slack only
# widens the candidate set.
_QUERY_SLACK = 1e-9


def _check_finite(*values: float) -> None:
    for value in values:
        if not math.isfinite(value):
            raise InvalidInputError(f"Coordinate must be finite, got {value}")


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """
    Great-circle distance between two points on a sphere of radius 6371.0088 km.

    Args:
        a: First point
        b: Second point

    Returns:
        Distance in km
    """
    _check_finite(a.lat, a.lon, b.lat, b.lon)
    return float(haversine_matrix(
        np.array([a.lat]), np.array([a.lon]),
        np.array([b.lat]), np.array([b.lon])
    )[0, 0])


def haversine_matrix(
    lats_a: np.ndarray,
    lons_a: np.ndarray,
    lats_b: np.ndarray,
    lons_b: np.ndarray
) -> np.ndarray:
    """Pairwise haversine distances in km, shape (len(a), len(b))."""
    lat1 = np.radians(np.asarray(lats_a, dtype=float))[:, None]
    lon1 = np.radians(np.asarray(lons_a, dtype=float))[:, None]
    lat2 = np.radians(np.asarray(lats_b, dtype=float))[None, :]
    lon2 = np.radians(np.asarray(lons_b, dtype=float))[None, :]

    if not (np.isfinite(lat1).all() and np.isfinite(lon1).all()
            and np.isfinite(lat2).all() and np.isfinite(lon2).all()):
        raise InvalidInputError("Coordinates must be finite")

    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = np.sin(dlat / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def haversine_paired(
    lats_a: np.ndarray,
    lons_a: np.ndarray,
    lats_b: np.ndarray,
    lons_b: np.ndarray
) -> np.ndarray:
    """Element-wise haversine distances in km for aligned coordinate arrays."""
    lat1, lon1 = np.radians(np.asarray(lats_a, dtype=float)), np.radians(np.asarray(lons_a, dtype=float))
    lat2, lon2 = np.radians(np.asarray(lats_b, dtype=float)), np.radians(np.asarray(lons_b, dtype=float))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


class SpatialIndex:
    """
    Immutable radius / nearest-neighbour index over a labelled point set.

    Candidates come from a haversine BallTree and are filtered again with
    haversine_matrix, so results match an exhaustive scan exactly.
    """

    def __init__(self, ids: Sequence[str], lats: np.ndarray, lons: np.ndarray):
        if len(ids) == 0:
            raise InvalidInputError("Cannot build a spatial index over an empty point set")
        self.ids: Tuple[str, ...] = tuple(ids)
        self.lats = np.asarray(lats, dtype=float)
        self.lons = np.asarray(lons, dtype=float)
        if not (np.isfinite(self.lats).all() and np.isfinite(self.lons).all()):
            raise InvalidInputError("Coordinates must be finite")
        self._tree = BallTree(np.radians(np.column_stack([self.lats, self.lons])), metric="haversine")
        self._position = {store_id: i for i, store_id in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def position(self, point_id: str) -> int:
        try:
            return self._position[point_id]
        except KeyError:
            raise MissingKeyError(point_id, "point id")

    def query_radius_positions(
        self,
        lats: np.ndarray,
        lons: np.ndarray,
        radius_km: float
    ) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        """
        Positions and distances of indexed points within radius_km of each query point.

        Returns:
            (positions per query, distances per query), both sorted by position
        """
        if not radius_km > 0:
            raise InvalidInputError(f"radius must be > 0, got {radius_km}")
        lats = np.atleast_1d(np.asarray(lats, dtype=float))
        lons = np.atleast_1d(np.asarray(lons, dtype=float))
        query = np.radians(np.column_stack([lats, lons]))
        candidates = self._tree.query_radius(query, r=radius_km / EARTH_RADIUS_KM + _QUERY_SLACK)

        positions, distances = [], []
        for k, cand in enumerate(candidates):
            cand = np.sort(cand)
            d = haversine_matrix(lats[k:k + 1], lons[k:k + 1], self.lats[cand], self.lons[cand])[0]
            keep = d <= radius_km
            positions.append(cand[keep])
            distances.append(d[keep])
        return positions, distances

    def nearest(self, lats: np.ndarray, lons: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest indexed point (position, distance km) for each query point."""
        lats = np.atleast_1d(np.asarray(lats, dtype=float))
        lons = np.atleast_1d(np.asarray(lons, dtype=float))
        query = np.radians(np.column_stack([lats, lons]))
        _, idx = self._tree.query(query, k=1)
        idx = idx[:, 0]
        d = haversine_paired(lats, lons, self.lats[idx], self.lons[idx])
        return idx, d


def neighbors_within(index: SpatialIndex, center: GeoPoint, radius: float) -> Set[str]:
    """
    Ids of all indexed points with haversine distance <= radius (km) from center.
    """
    positions, _ = index.query_radius_positions(np.array([center.lat]), np.array([center.lon]), radius)
    return {index.ids[p] for p in positions[0]}


class CellRegistry:
    """Grid-cell ids and their centroids."""

    def __init__(self, entries: Dict[str, GeoPoint]):
        for cell_id in entries:
            if not cell_id:
                raise InvalidInputError("Cell ids must be nonempty")
        self.entries: Dict[str, GeoPoint] = dict(entries)

    def __contains__(self, cell_id: str) -> bool:
        return cell_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, cell_id: str) -> GeoPoint:
        try:
            return self.entries[cell_id]
        except KeyError:
            raise MissingKeyError(cell_id, "cell id")

    def coordinates(self, cell_ids: Iterable[str]) -> Tuple[np.ndarray, np.ndarray]:
        points = [self.get(c) for c in cell_ids]
        return np.array([p.lat for p in points]), np.array([p.lon for p in points])

    def require(self, cell_ids: Iterable[str], what: Optional[str] = None) -> None:
        missing = sorted(set(cell_ids) - set(self.entries))
        if missing:
            raise MissingKeyError(missing[0], what or "cell id")


def cell_distance_km(reg: CellRegistry, i: str, j: str) -> float:
    """Haversine distance between two registered cell centroids."""
    a, b = reg.get(i), reg.get(j)
    if i == j:
        return 0.0
    return haversine_km(a, b)
