"""Planted-truth recovery on the default synthetic world. Slow: run with -m slow."""
from functools import lru_cache
from typing import Tuple
from amenity_space.config import PeriodGroups
from amenity_space.schemas import FitResult, GroundTruthManifest, SynthConfig
from amenity_space.services.complexity import amenity_labels, baseline_proximity, omega_panel
from amenity_space.services.fe_regression import fit, marginal_effects
from amenity_space.services.geo import CellRegistry
from amenity_space.services.panel_builder import build_panel, cluster_distance_table, map_cells_to_clusters
from amenity_space.services.regression_specs import get_spec
from amenity_space.services.synth import gen_transactions, gen_world
import numpy as np
import pytest

pytestmark = pytest.mark.slow

SEEDS = range(20)
COEFFICIENTS = ["omega", "log_dist", "omega_x_log_dist", "omega_x_covid", "omega_x_recovery"]


@lru_cache(maxsize=None)
def _fit_seed(seed: int) -> Tuple[GroundTruthManifest, FitResult]:
    world = gen_world(SynthConfig(seed=seed))
    records, manifest = gen_transactions(world)
    mapped, _ = map_cells_to_clusters(records, world.partition.membership, world.stores, CellRegistry(world.cells))
    baseline = list(world.config.baseline_periods)
    prox = baseline_proximity(mapped, baseline, amenity_labels(mapped))
    periods = sorted(mapped["period"].unique())
    omega = omega_panel(mapped, prox, periods, world.cluster_ids)
    panel, _ = build_panel(mapped, omega, cluster_distance_table(world.partition.clusters), PeriodGroups())
    return manifest, fit(get_spec("eq7_pooled"), panel)


def test_default_world_recovers_every_planted_peak():
    world = gen_world(SynthConfig())
    manifest = world.manifest
    assert len(world.stores) == 2000
    assert len(world.partition.clusters) == 20
    matched = sum(
        world.partition.membership.get(store_id) == manifest.peak_cluster.get(peak)
        for store_id, peak in manifest.store_peak.items()
    )
    assert matched / len(manifest.store_peak) >= 0.99


def test_planted_coefficients_are_recovered_within_three_se():
    covered = 0
    for seed in SEEDS:
        manifest, result = _fit_seed(seed)
        truth = manifest.standardized_coefficients
        if all(abs(result.coefficients[n] - truth[n]) <= 3 * result.se[n] for n in COEFFICIENTS):
            covered += 1
        assert result.coefficients["omega_x_log_dist"] < 0
        assert result.pvalues["omega_x_log_dist"] < 0.01
    assert covered >= 18


def test_marginal_curve_decreases_and_covers_the_planted_curve():
    good_seeds = 0
    for seed in SEEDS:
        manifest, result = _fit_seed(seed)
        truth = manifest.standardized_coefficients
        curve = marginal_effects(result)
        assert all(a > b for a, b in zip(curve.effect, curve.effect[1:]))
        planted = [truth["omega"] + truth["omega_x_log_dist"] * x for x in curve.log_dist_std]
        hits = sum(lo <= p <= hi for lo, p, hi in zip(curve.lower, planted, curve.upper))
        if hits >= 5:
            good_seeds += 1
    assert good_seeds >= 18


@pytest.mark.parametrize("seed", range(5))
def test_realised_block_proximity_gap_matches_the_planted_gap(seed):
    # 5 clusters x 1,000 baseline groups = 5,000 consumer groups
    world = gen_world(SynthConfig(seed=seed, n_peaks=5, baseline_groups_per_cluster=1000))
    records, manifest = gen_transactions(world)
    mapped, _ = map_cells_to_clusters(records, world.partition.membership, world.stores, CellRegistry(world.cells))
    prox = baseline_proximity(mapped, list(world.config.baseline_periods), amenity_labels(mapped))

    blocks = np.array([manifest.amenity_block[a] for a in prox.labels])
    upper_i, upper_j = np.triu_indices(len(prox.labels), k=1)
    phi = prox.values[upper_i, upper_j]
    same = blocks[upper_i] == blocks[upper_j]
    gap = phi[same].mean() - phi[~same].mean()
    assert gap == pytest.approx(manifest.expected_phi_within - manifest.expected_phi_cross, abs=0.05)
    assert phi[same].mean() == pytest.approx(manifest.expected_phi_within, abs=0.05)
    assert phi[~same].mean() == pytest.approx(manifest.expected_phi_cross, abs=0.05)
