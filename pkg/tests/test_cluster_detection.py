from amenity_space.errors import InvalidInputError
from amenity_space.services.cluster_detection import (
    DEFAULT_GAMMA, HALF_LIFE_KM, WALK_REFERENCE_KM, assign_clusters, decay_kernel, detect_clusters,
    effective_density, find_peaks
)
from tests.conftest import km_north, make_stores
from numpy.testing import assert_allclose
import math
import numpy as np
import pytest


def test_decay_kernel_calibration():
    assert decay_kernel(HALF_LIFE_KM, DEFAULT_GAMMA) == pytest.approx(0.5, abs=1e-3)
    assert decay_kernel(WALK_REFERENCE_KM, DEFAULT_GAMMA) == pytest.approx(0.0022, abs=1e-4)
    assert decay_kernel(0.0) == 1.0


def test_single_store_counts_only_itself():
    stores = make_stores([(37.5, 127.0)])
    density = effective_density(stores)
    assert density.scores.tolist() == [1.0]
    assert effective_density(stores, include_self=False).scores.tolist() == [0.0]


def test_two_close_stores_share_symmetric_density():
    stores = make_stores([(37.5, 127.0), (km_north(37.5, 0.1), 127.0)])
    density = effective_density(stores)
    expected = 1 + math.exp(-DEFAULT_GAMMA * 0.1)
    assert_allclose(density.scores, [expected, expected], rtol=1e-4)


def test_truncated_density_stays_within_reported_bound(rng):
    coords = [(37.5 + rng.normal(0, 0.01), 127.0 + rng.normal(0, 0.01)) for _ in range(300)]
    stores = make_stores(coords)
    exact = effective_density(stores, cutoff_km=math.inf)
    truncated = effective_density(stores, cutoff_km=0.5)
    assert exact.truncation_bound == 0.0
    assert np.all(exact.scores - truncated.scores <= truncated.truncation_bound + 1e-12)
    assert np.all(truncated.scores <= exact.scores + 1e-12)


def test_density_rejects_bad_parameters():
    stores = make_stores([(37.5, 127.0)])
    with pytest.raises(InvalidInputError):
        effective_density([])
    with pytest.raises(InvalidInputError):
        effective_density(stores, gamma=0)
    with pytest.raises(InvalidInputError):
        effective_density(stores, cutoff_km=-1)


def test_far_apart_stores_are_both_peaks():
    stores = make_stores([(37.5, 127.0), (km_north(37.5, 5.0), 127.0)])
    density = effective_density(stores)
    assert sorted(find_peaks(density, stores, 0.2)) == ["S000", "S001"]


def test_equal_scores_keep_the_smaller_id_as_peak():
    stores = make_stores([(37.5, 127.0), (km_north(37.5, 0.1), 127.0)])
    density = effective_density(stores)
    assert find_peaks(density, stores, 0.2) == ["S000"]


def test_no_two_peaks_within_peak_radius(rng):
    coords = [(37.5 + rng.normal(0, 0.004), 127.0 + rng.normal(0, 0.004)) for _ in range(200)]
    stores = make_stores(coords)
    density = effective_density(stores)
    peaks = find_peaks(density, stores, 0.2)
    by_id = {s.store_id: s for s in stores}
    for a in peaks:
        for b in peaks:
            if a < b:
                lat_a, lat_b = by_id[a].location.lat, by_id[b].location.lat
                lon_a, lon_b = by_id[a].location.lon, by_id[b].location.lon
                d = 6371.0088 * 2 * math.asin(math.sqrt(
                    math.sin(math.radians(lat_b - lat_a) / 2) ** 2
                    + math.cos(math.radians(lat_a)) * math.cos(math.radians(lat_b))
                    * math.sin(math.radians(lon_b - lon_a) / 2) ** 2
                ))
                assert d > 0.2


def test_min_score_filters_isolated_stores():
    stores = make_stores([(37.5, 127.0)])
    density = effective_density(stores)
    assert find_peaks(density, stores, 0.2, min_score=5.0) == []


def test_assignment_goes_to_nearest_peak_and_reports_unassigned():
    base = 37.5
    coords = [
        (base, 127.0),
        (km_north(base, 0.05), 127.0),
        (km_north(base, 3.0), 127.0),
        (km_north(base, 2.9), 127.0),
        (km_north(base, 10.0), 127.0),
    ]
    stores = make_stores(coords)
    density = effective_density(stores)
    partition = assign_clusters(stores, ["S000", "S002", "S004"], density, max_assign_km=0.5)
    clusters = {c.peak_store: c for c in partition.clusters}
    assert clusters["S000"].members == ["S000", "S001"]
    assert clusters["S002"].members == ["S002", "S003"]
    assert clusters["S004"].members == ["S004"]
    assert partition.unassigned == []

    tight = assign_clusters(stores, ["S000"], density, max_assign_km=0.5)
    assert tight.unassigned == ["S002", "S003", "S004"]
    assert tight.clusters[0].radius_km == pytest.approx(0.05, rel=1e-3)


def test_assignment_requires_peaks():
    stores = make_stores([(37.5, 127.0)])
    with pytest.raises(InvalidInputError):
        assign_clusters(stores, [], effective_density(stores))


def test_cluster_ids_follow_peak_strength():
    base = 37.5
    dense = [(km_north(base, 0.01 * k), 127.0) for k in range(5)]
    sparse = [(km_north(base, 4.0), 127.0), (km_north(base, 4.02), 127.0)]
    stores = make_stores(dense + sparse)
    _, peaks, partition, report = detect_clusters(stores)
    assert report.n_clusters == 2
    assert partition.clusters[0].cluster_id == 1
    assert partition.clusters[0].n_members == 5
    assert partition.membership["S005"] == 2


def test_detect_without_peaks_names_the_parameter():
    stores = make_stores([(37.5, 127.0)])
    with pytest.raises(InvalidInputError, match="min_peak_score"):
        detect_clusters(stores, min_peak_score=5.0)
