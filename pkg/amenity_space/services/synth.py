"""
Synthetic World and Transaction Generator

Handles:
- Stores scattered around peaks on a jittered lattice (truncated scatter), cells tiled at a fixed pitch
- Population profiles drawn around planted type archetypes
- Baseline visitor traffic with block-structured co-purchase
- Regression-period cluster totals from the planted specialisation pattern
- Resident flows from the log-linear model, with relatedness density computed
  by the pipeline's own functions on those totals
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
from amenity_space import __version__
from amenity_space.config import ClusterParams, PeriodGroups
from amenity_space.errors import ConvergenceError, InvalidInputError
from amenity_space.schemas import ClusterProfile, GeoPoint, GroundTruthManifest, StorePoint, SynthConfig
from amenity_space.services.cluster_detection import ClusterPartition, WALK_REFERENCE_KM, detect_clusters
from amenity_space.services.complexity import baseline_proximity, omega_panel
from amenity_space.services.geo import EARTH_RADIUS_KM, CellRegistry
from amenity_space.services.panel_builder import DISTANCE_OFFSET_KM, cell_clusters, cluster_distance_table
import numpy as np
import pandas as pd
import logging
import math

logger = logging.getLogger(__name__)

GENERATOR_VERSION = __version__
KM_PER_DEG_LAT = math.pi * EARTH_RADIUS_KM / 180.0
PEAK_JITTER = 0.1
BBOX_MARGIN_KM = 1.0
COORD_DECIMALS = 9
# cluster targets are rescaled to this multiple of the resident flows they must hold
FILL_HEADROOM = 1.25

# floating, working, residential density (persons / km^2); descending floating + working
ARCHETYPE_CENTERS = [
    [60000.0, 50000.0, 5000.0],
    [40000.0, 30000.0, 15000.0],
    [20000.0, 10000.0, 30000.0],
    [12000.0, 6000.0, 20000.0],
    [4000.0, 2000.0, 6000.0],
]

RECORD_COLUMNS = ["period", "res_cell", "dest_cell", "amenity_small", "age_band", "gender", "count", "amount"]


@dataclass
class World:
    config: SynthConfig
    stores: List[StorePoint]
    cells: Dict[str, GeoPoint]
    profiles: List[ClusterProfile]
    amenities: List[str]
    amenity_block: Dict[str, int]
    prices: Dict[str, float]
    partition: ClusterPartition
    cluster_params: ClusterParams
    residence_cells: Dict[int, List[str]]
    dest_cells: Dict[int, str]
    visitor_cells: List[str]
    manifest: GroundTruthManifest
    cell_cluster: Dict[str, Optional[int]] = field(default_factory=dict)

    @property
    def cluster_ids(self) -> List[int]:
        return sorted(c.cluster_id for c in self.partition.clusters)


class _Grid:
    """Local equirectangular frame around the synthetic origin, in km."""

    def __init__(self, config: SynthConfig, south_km: float, west_km: float, north_km: float, east_km: float):
        self.origin_lat = config.origin_lat
        self.origin_lon = config.origin_lon
        self.pitch = config.cell_pitch_km
        self.km_per_deg_lon = KM_PER_DEG_LAT * math.cos(math.radians(config.origin_lat))
        self.south = south_km
        self.west = west_km
        self.n_rows = max(1, int(math.ceil((north_km - south_km) / self.pitch)))
        self.n_cols = max(1, int(math.ceil((east_km - west_km) / self.pitch)))

    def to_latlon(self, north_km, east_km) -> Tuple[np.ndarray, np.ndarray]:
        lat = self.origin_lat + np.asarray(north_km, dtype=float) / KM_PER_DEG_LAT
        lon = self.origin_lon + np.asarray(east_km, dtype=float) / self.km_per_deg_lon
        return np.round(lat, COORD_DECIMALS), np.round(lon, COORD_DECIMALS)

    def cell_of(self, north_km: float, east_km: float) -> str:
        row = min(max(int((north_km - self.south) // self.pitch), 0), self.n_rows - 1)
        col = min(max(int((east_km - self.west) // self.pitch), 0), self.n_cols - 1)
        return f"C{row:04d}_{col:04d}"

    def cells(self) -> Dict[str, GeoPoint]:
        rows, cols = np.meshgrid(np.arange(self.n_rows), np.arange(self.n_cols), indexing="ij")
        north = self.south + (rows.ravel() + 0.5) * self.pitch
        east = self.west + (cols.ravel() + 0.5) * self.pitch
        lats, lons = self.to_latlon(north, east)
        return {
            f"C{r:04d}_{c:04d}": GeoPoint(lat=float(la), lon=float(lo))
            for r, c, la, lo in zip(rows.ravel(), cols.ravel(), lats, lons)
        }


def _generators(seed: int, names: List[str]) -> Dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


def expected_phi(within_prob: float, cross_prob: float, n_blocks: int) -> Tuple[float, float]:
    """
    Population proximity of two amenities in the same / different blocks when
    every group picks one block uniformly and includes each amenity
    independently (within_prob inside its block, cross_prob elsewhere).

    Baseline groups carry no cluster specialisation, so a group's RCA
    exceeds 1 on its included amenities and the realised proximity
    matches these values up to sampling error.
    """
    share = 1.0 / n_blocks
    ubiquity = share * within_prob + (1 - share) * cross_prob
    if ubiquity <= 0:
        return 0.0, 0.0
    within = (share * within_prob ** 2 + (1 - share) * cross_prob ** 2) / ubiquity
    if n_blocks < 2:
        return within, 0.0
    cross = (2 * share * within_prob * cross_prob + (1 - 2 * share) * cross_prob ** 2) / ubiquity
    return within, cross


def _scatter(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Truncated normal store offsets (km); the first store sits on the peak."""
    limit = config.store_scatter_truncation_sd * config.store_scatter_sd_km
    scatter = rng.normal(0.0, config.store_scatter_sd_km, size=(config.stores_per_peak, 2))
    far = np.hypot(scatter[:, 0], scatter[:, 1]) > limit
    while far.any():
        scatter[far] = rng.normal(0.0, config.store_scatter_sd_km, size=(int(far.sum()), 2))
        far = np.hypot(scatter[:, 0], scatter[:, 1]) > limit
    scatter[0] = 0.0
    return scatter


def _peak_offsets(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    n_cols = int(math.ceil(math.sqrt(config.n_peaks)))
    offsets = np.empty((config.n_peaks, 2))
    for k in range(config.n_peaks):
        row, col = divmod(k, n_cols)
        jitter = rng.uniform(-PEAK_JITTER, PEAK_JITTER, size=2) * config.peak_spacing_km
        offsets[k] = [row * config.peak_spacing_km + jitter[0], col * config.peak_spacing_km + jitter[1]]
    if config.n_peaks == 1:
        offsets[0] = 0.0
    return offsets


def _detect(stores: List[StorePoint], params: ClusterParams) -> Tuple[ClusterPartition, ClusterParams]:
    try:
        _, _, partition, _ = detect_clusters(
            stores, gamma=params.gamma, cutoff_km=params.cutoff_km, peak_radius_km=params.peak_radius_km,
            max_assign_km=params.max_assign_km, min_peak_score=params.min_peak_score,
            include_self=params.include_self
        )
        return partition, params
    except InvalidInputError:
        # tiny worlds: no store reaches the score floor
        relaxed = params.model_copy(update={"min_peak_score": 0.0})
        logger.warning("No synthetic store reaches clusters.min_peak_score; detecting with min_peak_score=0")
        _, _, partition, _ = detect_clusters(
            stores, gamma=relaxed.gamma, cutoff_km=relaxed.cutoff_km, peak_radius_km=relaxed.peak_radius_km,
            max_assign_km=relaxed.max_assign_km, min_peak_score=0.0, include_self=relaxed.include_self
        )
        return partition, relaxed


def gen_world(
    config: SynthConfig,
    cluster_params: Optional[ClusterParams] = None,
    cell_map_max_km: float = WALK_REFERENCE_KM
) -> World:
    """
    Stores, cell registry, profiles and the planted parts of the manifest.

    Clusters are detected on the generated stores with the pipeline's own
    detector so profiles can be keyed by the cluster ids the pipeline will
    reproduce.
    """
    cluster_params = cluster_params or ClusterParams()
    rngs = _generators(config.seed, ["peaks", "stores", "residence", "profiles", "prices"])

    amenities = [f"A{p + 1:02d}" for p in range(config.n_amenities)]
    block_size = config.n_amenities // config.n_blocks
    amenity_block = {a: p // block_size for p, a in enumerate(amenities)}

    peaks_km = _peak_offsets(config, rngs["peaks"])
    store_km, store_peak_idx = [], []
    for k, (north, east) in enumerate(peaks_km):
        store_km.append(_scatter(config, rngs["stores"]) + [north, east])
        store_peak_idx.extend([k] * config.stores_per_peak)
    store_km = np.vstack(store_km)
    categories = rngs["stores"].integers(0, config.n_amenities, size=len(store_km))

    south, west = store_km.min(axis=0) - BBOX_MARGIN_KM
    north, east = store_km.max(axis=0) + BBOX_MARGIN_KM
    grid = _Grid(config, south, west, north, east)

    store_lats, store_lons = grid.to_latlon(store_km[:, 0], store_km[:, 1])
    stores = [
        StorePoint(
            store_id=f"S{a:05d}",
            location=GeoPoint(lat=float(store_lats[a]), lon=float(store_lons[a])),
            category_small=amenities[categories[a]],
            category_large=f"L{amenity_block[amenities[categories[a]]] + 1}"
        )
        for a in range(len(store_km))
    ]
    store_peak = {s.store_id: int(k) for s, k in zip(stores, store_peak_idx)}
    peak_lats, peak_lons = grid.to_latlon(peaks_km[:, 0], peaks_km[:, 1])
    peaks = [GeoPoint(lat=float(la), lon=float(lo)) for la, lo in zip(peak_lats, peak_lons)]

    cells = grid.cells()
    center = np.array([(south + north) / 2, (west + east) / 2])
    ring = math.hypot(north - south, east - west) / 2 + config.visitor_ring_km
    angles = 2 * math.pi * np.arange(config.n_visitor_cells) / config.n_visitor_cells
    v_lats, v_lons = grid.to_latlon(center[0] + ring * np.sin(angles), center[1] + ring * np.cos(angles))
    visitor_cells = [f"V{k:04d}" for k in range(config.n_visitor_cells)]
    for cell_id, la, lo in zip(visitor_cells, v_lats, v_lons):
        cells[cell_id] = GeoPoint(lat=float(la), lon=float(lo))

    partition, used_params = _detect(stores, cluster_params)
    peak_cluster: Dict[int, int] = {}
    cluster_peak: Dict[int, int] = {}
    for cluster in partition.clusters:
        planted = store_peak[cluster.peak_store]
        cluster_peak[cluster.cluster_id] = planted
        peak_cluster.setdefault(planted, cluster.cluster_id)
    if len(partition.clusters) != config.n_peaks:
        logger.warning(f"Detected {len(partition.clusters)} clusters for {config.n_peaks} planted peaks")

    # residence cells, spread round-robin over the planted peaks
    cell_peak: Dict[str, int] = {}
    per_peak = [config.n_residence_cells // config.n_peaks + (k < config.n_residence_cells % config.n_peaks)
                for k in range(config.n_peaks)]
    for k, wanted in enumerate(per_peak):
        chosen: List[str] = []
        for _ in range(50 * max(wanted, 1)):
            if len(chosen) >= wanted:
                break
            d = rngs["residence"].normal(0.0, config.residence_scatter_km, size=2) + peaks_km[k]
            cell_id = grid.cell_of(d[0], d[1])
            if cell_id not in cell_peak:
                cell_peak[cell_id] = k
                chosen.append(cell_id)

    peak_store_cells = {}
    for cluster in partition.clusters:
        pos = int(cluster.peak_store[1:])
        peak_store_cells[cluster.cluster_id] = grid.cell_of(store_km[pos, 0], store_km[pos, 1])

    registry = CellRegistry(cells)
    membership = partition.membership
    mapped = cell_clusters(sorted(set(cell_peak) | set(peak_store_cells.values())), membership, stores,
                           registry, cell_map_max_km)

    dest_cells: Dict[int, str] = {}
    for cluster_id, cell_id in peak_store_cells.items():
        if mapped.get(cell_id) != cluster_id:
            raise InvalidInputError(f"Peak cell {cell_id} of cluster {cluster_id} does not map back to it")
        dest_cells[cluster_id] = cell_id

    residence_cells: Dict[int, List[str]] = {c.cluster_id: [] for c in partition.clusters}
    for cell_id in sorted(cell_peak):
        cluster_id = mapped.get(cell_id)
        if cluster_id is not None:
            residence_cells[cluster_id].append(cell_id)
    for cluster_id, found in residence_cells.items():
        if not found:
            found.append(dest_cells[cluster_id])

    n_archetypes = min(config.n_archetypes, len(ARCHETYPE_CENTERS))
    archetype_of_peak = rngs["profiles"].permutation(config.n_peaks) % n_archetypes
    peak_archetype = {k: int(a) for k, a in enumerate(archetype_of_peak)}
    centers = np.array(ARCHETYPE_CENTERS[:n_archetypes])
    profiles = []
    for cluster_id in sorted(cluster_peak):
        noise = np.exp(rngs["profiles"].normal(0.0, config.profile_noise_sd, size=3))
        values = centers[peak_archetype[cluster_peak[cluster_id]]] * noise
        profiles.append(ClusterProfile(
            cluster_id=cluster_id,
            floating_density=float(np.round(values[0], 3)),
            working_density=float(np.round(values[1], 3)),
            residential_density=float(np.round(values[2], 3))
        ))

    prices = {a: float(np.round(rngs["prices"].uniform(5.0, 50.0), 2)) for a in amenities}
    within, cross = expected_phi(config.within_block_prob, config.cross_block_prob, config.n_blocks)
    manifest = GroundTruthManifest(
        generator_version=GENERATOR_VERSION,
        seed=config.seed,
        config=config,
        peaks=peaks,
        store_peak=store_peak,
        cell_peak=cell_peak,
        amenity_block=amenity_block,
        peak_cluster=peak_cluster,
        peak_archetype=peak_archetype,
        archetype_centers=centers.tolist(),
        cluster_params=used_params.model_dump(),
        coefficients={
            "beta_0": config.beta_0,
            "omega": config.beta_omega,
            "log_dist": config.beta_dist,
            "omega_x_log_dist": config.beta_int,
            "omega_x_covid": config.beta_covid,
            "omega_x_recovery": config.beta_recovery,
        },
        expected_phi_within=within,
        expected_phi_cross=cross
    )
    logger.info(
        f"Generated world: {len(stores)} stores, {len(cells)} cells, "
        f"{len(partition.clusters)} detected clusters, {len(cell_peak)} residence cells"
    )
    return World(
        config=config,
        stores=stores,
        cells=cells,
        profiles=profiles,
        amenities=amenities,
        amenity_block=amenity_block,
        prices=prices,
        partition=partition,
        cluster_params=used_params,
        residence_cells=residence_cells,
        dest_cells=dest_cells,
        visitor_cells=visitor_cells,
        manifest=manifest,
        cell_cluster=mapped
    )


def _specialisation_path(
    config: SynthConfig,
    n_clusters: int,
    periods: List[str],
    rng: np.random.Generator
) -> Dict[str, np.ndarray]:
    """Planted cluster x amenity specialisation per period; each period flips a few entries."""
    current = rng.random((n_clusters, config.n_amenities)) < config.cluster_specialization_share
    path = {}
    for period in periods:
        path[period] = current.copy()
        flips = rng.random(current.shape) < config.specialization_flip_prob
        current = current ^ flips
    return path


def _target_pattern(world: World, periods: List[str], rng: np.random.Generator) -> np.ndarray:
    """Relative cluster totals (n_clusters, n_amenities, n_periods): boosted where specialised."""
    config = world.config
    path = _specialisation_path(config, len(world.cluster_ids), periods, rng)
    return np.stack(
        [np.where(path[period], config.cluster_specialization_boost, 1.0) for period in periods], axis=2
    )


def _visitor_groups(
    world: World,
    n_groups: int,
    rng: np.random.Generator
) -> Tuple[List[Tuple[str, str, str]], np.ndarray]:
    """
    Draw visitor groups for one cluster and period.

    Each group picks one amenity block and includes every amenity with
    within_block_prob inside it and cross_block_prob elsewhere; included
    amenities get group_specialization_boost times the weight.

    Returns:
        (group keys (cell, age band, gender), weights of shape (n_groups, n_amenities))
    """
    config = world.config
    blocks = np.array([world.amenity_block[a] for a in world.amenities])
    combos = [(c, age, g) for c in world.visitor_cells for age in config.age_bands for g in config.genders]
    n_groups = min(n_groups, len(combos))
    picked = rng.choice(len(combos), size=n_groups, replace=False)
    block = rng.integers(0, config.n_blocks, size=n_groups)
    prob = np.where(blocks[None, :] == block[:, None], config.within_block_prob, config.cross_block_prob)
    included = rng.random(prob.shape) < prob
    weights = (
        np.where(included, config.group_specialization_boost, 1.0)
        * np.exp(rng.normal(0.0, config.visitor_noise_sd, size=prob.shape))
    )
    return [combos[g] for g in picked], weights


def _visitor_frame(
    world: World,
    period: str,
    cluster_id: int,
    keys: List[Tuple[str, str, str]],
    counts: np.ndarray
) -> pd.DataFrame:
    n_amen = len(world.amenities)
    res, age, gender = zip(*keys)
    return pd.DataFrame({
        "period": period,
        "res_cell": np.repeat(res, n_amen),
        "dest_cell": world.dest_cells[cluster_id],
        "amenity_small": np.tile(world.amenities, len(keys)),
        "age_band": np.repeat(age, n_amen),
        "gender": np.repeat(gender, n_amen),
        "count": counts.ravel(),
        "dest_cluster": cluster_id,
        "res_cluster": pd.array([pd.NA] * counts.size, dtype="Int64"),
    })


def _baseline_visitors(world: World, baseline: List[str], rng: np.random.Generator) -> pd.DataFrame:
    """Proximity-period traffic: block structure only, no cluster specialisation."""
    config = world.config
    frames = []
    for period in baseline:
        for cluster_id in world.cluster_ids:
            keys, weights = _visitor_groups(world, config.baseline_groups_per_cluster, rng)
            counts = np.round(config.visitor_base_count * weights).astype(np.int64)
            frames.append(_visitor_frame(world, period, cluster_id, keys, counts))
    return pd.concat(frames, ignore_index=True)


def _regression_visitors(
    world: World,
    periods: List[str],
    fill: np.ndarray,
    rng: np.random.Generator
) -> pd.DataFrame:
    """Split each cluster total left after residents over the cluster's visitor groups."""
    frames = []
    for t, period in enumerate(periods):
        for ci, cluster_id in enumerate(world.cluster_ids):
            keys, weights = _visitor_groups(world, world.config.visitor_groups_per_cluster, rng)
            shares = weights / weights.sum(axis=0, keepdims=True)
            counts = np.column_stack([
                rng.multinomial(int(fill[ci, p, t]), shares[:, p]) for p in range(len(world.amenities))
            ])
            frames.append(_visitor_frame(world, period, cluster_id, keys, counts))
    return pd.concat(frames, ignore_index=True)


def _totals_frame(world: World, periods: List[str], totals: np.ndarray) -> pd.DataFrame:
    n_c, n_a, n_t = totals.shape
    i, p, t = np.meshgrid(np.arange(n_c), np.arange(n_a), np.arange(n_t), indexing="ij")
    return pd.DataFrame({
        "period": np.array(periods, dtype=object)[t.ravel()],
        "dest_cluster": np.array(world.cluster_ids, dtype=np.int64)[i.ravel()],
        "amenity_small": np.array(world.amenities, dtype=object)[p.ravel()],
        "count": totals.ravel(),
    })


def _zscore(values: np.ndarray) -> np.ndarray:
    sd = values.std()
    return (values - values.mean()) / sd if sd > 0 else np.zeros_like(values)


def _omega_array(records: pd.DataFrame, prox, periods: List[str], clusters: List[int]) -> np.ndarray:
    omega = omega_panel(records, prox, periods, clusters)
    n_amen = len(prox.labels)
    # omega_panel rows: period-major, then cluster, then amenity
    return omega["omega"].to_numpy().reshape(len(periods), len(clusters), n_amen).transpose(1, 2, 0)


def _resident_records(
    world: World,
    counts: np.ndarray,
    periods: List[str]
) -> pd.DataFrame:
    config = world.config
    clusters = world.cluster_ids
    n_c, n_a, n_t = len(clusters), len(world.amenities), len(periods)
    i, j, p, t = np.meshgrid(np.arange(n_c), np.arange(n_c), np.arange(n_a), np.arange(n_t), indexing="ij")
    i, j, p, t = i.ravel(), j.ravel(), p.ravel(), t.ravel()
    res_cells = [world.residence_cells[c] for c in clusters]
    return pd.DataFrame({
        "period": np.array(periods, dtype=object)[t],
        "res_cell": [res_cells[jj][(pp + tt) % len(res_cells[jj])] for jj, pp, tt in zip(j, p, t)],
        "dest_cell": [world.dest_cells[clusters[ii]] for ii in i],
        "amenity_small": np.array(world.amenities, dtype=object)[p],
        "age_band": np.array(config.age_bands, dtype=object)[(i + p) % len(config.age_bands)],
        "gender": np.array(config.genders, dtype=object)[(i + j + p) % len(config.genders)],
        "count": counts.ravel(),
        "dest_cluster": np.array(clusters, dtype=np.int64)[i],
        "res_cluster": pd.array(np.array(clusters, dtype=np.int64)[j], dtype="Int64"),
    })


def gen_transactions(
    world: World,
    groups: Optional[PeriodGroups] = None,
    offset_km: float = DISTANCE_OFFSET_KM,
    consumer_group_mode: str = "with_shopping_area"
) -> Tuple[pd.DataFrame, GroundTruthManifest]:
    """
    Visitor and resident transaction records plus the completed manifest.

    Resident counts are round-half-to-even(exp(L)) with
    L = b0 + b_w*zw + b_d*zd + b_int*zw*zd + b_cov*zw*covid + b_rec*zw*recovery
        + destination/residence/amenity effects + period shift + noise,
    zw and zd z-scored over the dense (destination, residence, amenity,
    period) panel.

    Every regression period fixes the cluster x amenity totals first (scaled
    planted specialisation pattern) and derives omega from them. Visitors
    then fill each total up after residents, so the pipeline's cluster counts
    equal the targets exactly and omega reproduces the omega the counts were
    drawn with. Targets are scaled up until the residents fit under them.

    Raises:
        ConvergenceError: residents never fit under the targets within
            fixed_point_max_iter rescalings, or the rebuilt omega differs
    """
    config = world.config
    groups = groups or PeriodGroups()
    clusters = world.cluster_ids
    if len(clusters) < 1:
        raise InvalidInputError("World has no clusters")
    periods = list(config.periods)
    baseline = list(config.baseline_periods) or periods
    rngs = _generators(config.seed + 1, ["visitors", "targets", "fill", "effects"] + [f"res_{c}" for c in clusters])

    baseline_visitors = _baseline_visitors(world, baseline, rngs["visitors"])
    prox = baseline_proximity(baseline_visitors, baseline, world.amenities, consumer_group_mode)

    distances = cluster_distance_table(world.partition.clusters)
    n_c, n_a, n_t = len(clusters), len(world.amenities), len(periods)
    dist = distances["distance_km"].to_numpy().reshape(n_c, n_c)
    zd = _zscore(np.log(dist + offset_km))[:, :, None, None]

    years = [int(p[:4]) for p in periods]
    covid = np.array([groups.group_of(y) == "covid" for y in years], dtype=float)
    recovery = np.array([groups.group_of(y) == "recovery" for y in years], dtype=float)

    effects = rngs["effects"]
    mu = effects.normal(0.0, config.fe_sd, size=n_c)[:, None, None, None]
    eta = effects.normal(0.0, config.fe_sd, size=n_c)[None, :, None, None]
    gam = effects.normal(0.0, config.fe_sd, size=n_a)[None, None, :, None]
    tau = effects.normal(0.0, config.period_shift_sd, size=n_t)[None, None, None, :]
    eps = np.stack([rngs[f"res_{c}"].normal(0.0, config.noise_sd, size=(n_c, n_a, n_t)) for c in clusters], axis=1)
    base = config.beta_0 + config.beta_dist * zd + mu + eta + gam + tau + eps

    pattern = _target_pattern(world, periods, rngs["targets"])
    n_groups = min(config.visitor_groups_per_cluster,
                   len(world.visitor_cells) * len(config.age_bands) * len(config.genders))
    scale = np.full(n_t, config.visitor_base_count * n_groups)
    consistent, iterations, shortfall = False, 0, 0.0
    for iterations in range(1, config.fixed_point_max_iter + 1):
        totals = np.round(scale[None, None, :] * pattern).astype(np.int64)
        omega = _omega_array(_totals_frame(world, periods, totals), prox, periods, clusters)
        zw = _zscore(omega)[:, None, :, :]
        latent = base + zw * (
            config.beta_omega + config.beta_int * zd
            + config.beta_covid * covid + config.beta_recovery * recovery
        )
        counts = np.round(np.exp(latent)).astype(np.int64)
        # every visitor group keeps at least one purchase on average
        needed = counts.sum(axis=1) + n_groups
        shortfall = float((needed - totals).max())
        logger.debug(f"Target iteration {iterations}: largest shortfall {shortfall:.0f}")
        if shortfall <= 0:
            consistent = True
            break
        scale = np.maximum(scale, FILL_HEADROOM * (needed / pattern).max(axis=(0, 1)))
    if not consistent:
        logger.warning(f"Resident flows exceed the cluster targets after {iterations} rescalings")
        raise ConvergenceError("Planted omega is not self-consistent", shortfall, iterations)

    residents = _resident_records(world, counts, periods)
    fill = totals - counts.sum(axis=1)
    regression_visitors = _regression_visitors(world, periods, fill, rngs["fill"])
    rebuilt = _omega_array(pd.concat([regression_visitors, residents], ignore_index=True), prox, periods, clusters)
    changed = int((rebuilt != omega).sum())
    if changed:
        logger.warning(f"{changed} omega entries differ when rebuilt from the generated records")
        raise ConvergenceError("Planted omega is not self-consistent", float(np.abs(rebuilt - omega).max()),
                               iterations)

    records = pd.concat([baseline_visitors, regression_visitors, residents], ignore_index=True)
    records["amount"] = np.round(records["count"] * records["amenity_small"].map(world.prices), 2)
    records = records[RECORD_COLUMNS]

    log_outcome = np.log1p(counts.astype(float))
    outcome_sd = float(log_outcome.std())
    coefficients = world.manifest.coefficients
    manifest = world.manifest.model_copy(update={
        "standardized_coefficients": {
            k: v / outcome_sd for k, v in coefficients.items() if k != "beta_0"
        } if outcome_sd > 0 else {},
        "outcome_sd": outcome_sd,
        "omega_consistent": consistent,
        "fixed_point_iterations": iterations,
        "max_log_rounding_error": float(np.abs(log_outcome - latent).max()),
        "n_records": len(records),
    })
    logger.info(
        f"Generated {len(records)} transaction records ({len(residents)} resident flows); "
        f"cluster targets settled after {iterations} iterations"
    )
    return records, manifest
