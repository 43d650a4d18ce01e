from amenity_space.config import ClusterParams, PeriodGroups
from amenity_space.errors import ConvergenceError
from amenity_space.schemas import SynthConfig
from amenity_space.services.complexity import amenity_labels, baseline_proximity, omega_panel
from amenity_space.services.geo import CellRegistry, haversine_km
from amenity_space.services.panel_builder import build_panel, cluster_distance_table, map_cells_to_clusters
from amenity_space.services.synth import expected_phi, gen_transactions, gen_world
from tests.conftest import TINY_SYNTH
from pydantic import ValidationError
import numpy as np
import pandas as pd
import pytest


def test_single_store_sits_on_its_peak():
    config = SynthConfig(n_peaks=1, stores_per_peak=1, n_residence_cells=4, n_visitor_cells=4)
    world = gen_world(config)
    assert len(world.stores) == 1
    assert world.stores[0].location == world.manifest.peaks[0]
    # a lone store never reaches the default score floor
    assert world.cluster_params.min_peak_score == 0.0
    assert world.manifest.cluster_params["min_peak_score"] == 0.0
    assert world.cluster_ids == [1]


def test_world_is_deterministic_in_the_seed(tiny_synth_config, tiny_world):
    again = gen_world(tiny_synth_config)
    assert again.stores == tiny_world.stores
    assert again.profiles == tiny_world.profiles
    assert again.cells == tiny_world.cells
    other = gen_world(tiny_synth_config.model_copy(update={"seed": 8}))
    assert other.stores != tiny_world.stores


def test_transactions_are_deterministic(tiny_world, tiny_transactions):
    records, manifest = gen_transactions(tiny_world, PeriodGroups())
    pd.testing.assert_frame_equal(records, tiny_transactions[0])
    assert manifest == tiny_transactions[1]


def test_transactions_follow_the_ingestion_schema(tiny_transactions):
    records, manifest = tiny_transactions
    assert list(records.columns) == [
        "period", "res_cell", "dest_cell", "amenity_small", "age_band", "gender", "count", "amount"
    ]
    assert (records["count"] >= 0).all()
    assert (records["amount"] >= 0).all()
    assert set(records["period"]) == set(TINY_SYNTH["periods"]) | set(TINY_SYNTH["baseline_periods"])
    assert manifest.n_records == len(records)


def test_every_detected_cluster_gets_a_profile(tiny_world):
    assert sorted(p.cluster_id for p in tiny_world.profiles) == tiny_world.cluster_ids
    assert set(tiny_world.dest_cells) == set(tiny_world.cluster_ids)


def test_flat_model_gives_constant_resident_counts():
    config = SynthConfig(**{
        **TINY_SYNTH,
        "noise_sd": 0.0, "fe_sd": 0.0, "period_shift_sd": 0.0,
        "beta_omega": 0.0, "beta_dist": 0.0, "beta_int": 0.0, "beta_covid": 0.0, "beta_recovery": 0.0,
    })
    records, manifest = gen_transactions(gen_world(config))
    residents = records[~records["res_cell"].str.startswith("V")]
    assert not residents.empty
    assert set(residents["count"]) == {int(round(np.exp(6.0)))}
    assert manifest.outcome_sd == pytest.approx(0.0, abs=1e-9)


def test_planted_coefficients_are_recorded(tiny_transactions):
    _, manifest = tiny_transactions
    assert manifest.coefficients["omega_x_log_dist"] == SynthConfig().beta_int
    assert manifest.outcome_sd > 0
    ratio = manifest.standardized_coefficients["log_dist"] / manifest.coefficients["log_dist"]
    assert ratio == pytest.approx(1 / manifest.outcome_sd)


def test_overlapping_peaks_are_rejected():
    with pytest.raises(ValidationError, match="separable"):
        SynthConfig(n_peaks=2, peak_spacing_km=0.5, store_scatter_sd_km=0.15)


def test_blocks_must_divide_amenities():
    with pytest.raises(ValidationError):
        SynthConfig(n_amenities=10, n_blocks=3)


def test_baseline_must_not_overlap_periods():
    with pytest.raises(ValidationError):
        SynthConfig(periods=["2019-06"], baseline_periods=["2019-06"])


def test_within_block_proximity_exceeds_cross_block():
    within, cross = expected_phi(0.8, 0.05, 6)
    assert 0 <= cross < within <= 1
    assert expected_phi(0.8, 0.05, 1)[1] == 0.0
    assert expected_phi(0.0, 0.0, 3) == (0.0, 0.0)


def test_relaxed_detection_is_not_used_when_peaks_are_dense(tiny_world):
    assert tiny_world.cluster_params == ClusterParams()


def test_stores_stay_within_the_scatter_truncation(tiny_world):
    config = tiny_world.config
    limit = config.store_scatter_truncation_sd * config.store_scatter_sd_km
    peaks = tiny_world.manifest.peaks
    for store in tiny_world.stores:
        peak = peaks[tiny_world.manifest.store_peak[store.store_id]]
        assert haversine_km(store.location, peak) <= limit + 1e-3


def test_outcome_sd_is_the_pipeline_panel_sd(tiny_world, tiny_transactions):
    records, manifest = tiny_transactions
    mapped, _ = map_cells_to_clusters(
        records, tiny_world.partition.membership, tiny_world.stores, CellRegistry(tiny_world.cells)
    )
    baseline = list(tiny_world.config.baseline_periods)
    prox = baseline_proximity(mapped, baseline, amenity_labels(mapped))
    periods = list(tiny_world.config.periods)
    omega = omega_panel(mapped, prox, periods, tiny_world.cluster_ids)
    panel, report = build_panel(mapped, omega, cluster_distance_table(tiny_world.partition.clusters), PeriodGroups())
    assert len(panel) == len(tiny_world.cluster_ids) ** 2 * len(tiny_world.amenities) * len(periods)
    assert manifest.outcome_sd == pytest.approx(report.moments["log_count"].sd, rel=1e-12)


def test_cluster_totals_reproduce_the_planted_omega(tiny_transactions):
    _, manifest = tiny_transactions
    assert manifest.omega_consistent is True
    assert 1 <= manifest.fixed_point_iterations <= manifest.config.fixed_point_max_iter


def test_targets_too_small_to_hold_residents_raise():
    config = SynthConfig(**{**TINY_SYNTH, "visitor_base_count": 1.0, "fixed_point_max_iter": 1})
    with pytest.raises(ConvergenceError) as info:
        gen_transactions(gen_world(config))
    assert info.value.iterations == 1
    assert info.value.last_delta > 0
