"""
Amenity Cluster Typology

Handles:
- k-means on z-scored (floating, working, residential) population densities
- Best-of-restarts selection with seeds derived from one master seed
- Letter labels ordered by descending floating + working centroid density
"""
from dataclasses import dataclass, field
from typing import Dict, List, Sequence
from sklearn.cluster import KMeans
from sklearn.preprocessing import StandardScaler
from amenity_space.errors import InvalidInputError
from amenity_space.schemas import ClusterProfile
import numpy as np
import pandas as pd
import logging
import string

logger = logging.getLogger(__name__)

FEATURES = ["floating_density", "working_density", "residential_density"]


@dataclass
class TypologyResult:
    labels: Dict[int, str]
    letters: List[str]
    centroids_raw: np.ndarray
    centroids_std: np.ndarray
    restart_inertia: List[float] = field(default_factory=list)
    best_restart: int = 0

    @property
    def inertia(self) -> float:
        return self.restart_inertia[self.best_restart]

    def labels_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "cluster_id": list(self.labels),
            "type": list(self.labels.values()),
        }).sort_values("cluster_id", kind="mergesort").reset_index(drop=True)

    def centroids_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.centroids_raw, columns=FEATURES)
        for c, name in enumerate(FEATURES):
            frame[f"{name}_std"] = self.centroids_std[:, c]
        frame.insert(0, "type", self.letters)
        return frame


def _restart_seeds(seed: int, n_restarts: int) -> List[int]:
    children = np.random.SeedSequence(seed).spawn(n_restarts)
    return [int(child.generate_state(1)[0]) for child in children]


def kmeans_typology(
    profiles: Sequence[ClusterProfile],
    k: int = 5,
    seed: int = 0,
    n_restarts: int = 16,
    max_iter: int = 300
) -> TypologyResult:
    """
    Group clusters into k population types.

    Each restart is a single k-means++ run with its own derived seed; the
    lowest inertia wins, the earliest restart on ties. Letters go to the
    groups in descending order of their raw floating + working centroid sum.
    """
    n = len(profiles)
    if k < 1 or n < k:
        raise InvalidInputError(f"k-means needs at least k={k} profiles, got {n}")
    if k > len(string.ascii_uppercase):
        raise InvalidInputError(f"k must be <= {len(string.ascii_uppercase)}")

    ids = [p.cluster_id for p in profiles]
    if len(set(ids)) != n:
        raise InvalidInputError("Duplicate cluster ids in profiles")
    raw = np.array([[getattr(p, f) for f in FEATURES] for p in profiles], dtype=float)
    z = StandardScaler().fit_transform(raw)

    inertia, runs = [], []
    for restart, restart_seed in enumerate(_restart_seeds(seed, n_restarts)):
        model = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=max_iter, random_state=restart_seed)
        model.fit(z)
        inertia.append(float(model.inertia_))
        runs.append(model.labels_.copy())
        logger.debug(f"k-means restart {restart}: inertia {model.inertia_:.6f} after {model.n_iter_} iterations")
    best = int(np.argmin(inertia))
    assignment = runs[best]

    groups = sorted(set(assignment.tolist()))
    centroids_raw = np.array([raw[assignment == g].mean(axis=0) for g in groups])
    centroids_std = np.array([z[assignment == g].mean(axis=0) for g in groups])
    order = sorted(range(len(groups)), key=lambda g: (-(centroids_raw[g, 0] + centroids_raw[g, 1]), g))
    letters = list(string.ascii_uppercase[:len(groups)])
    letter_of = {groups[g]: letters[rank] for rank, g in enumerate(order)}

    if len(groups) < k:
        logger.warning(f"k-means produced {len(groups)} nonempty groups for k={k}")
    logger.info(f"Typology: best restart {best} of {n_restarts}, inertia {inertia[best]:.4f}")
    return TypologyResult(
        labels={cid: letter_of[g] for cid, g in zip(ids, assignment.tolist())},
        letters=letters,
        centroids_raw=centroids_raw[order],
        centroids_std=centroids_std[order],
        restart_inertia=inertia,
        best_restart=best
    )
