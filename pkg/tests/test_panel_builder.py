from amenity_space.config import PeriodGroups
from amenity_space.errors import DegenerateSampleError, InvalidInputError, MissingKeyError
from amenity_space.schemas import AmenityCluster, GeoPoint
from amenity_space.services.geo import CellRegistry
from amenity_space.services.panel_builder import (
    INTERVALS, build_panel, cluster_distance_table, interval_of, log_distance, map_cells_to_clusters,
    period_dummies, split_by_interval, standardize
)
from tests.conftest import km_north, make_stores
from numpy.testing import assert_allclose
import numpy as np
import pandas as pd
import pytest


def test_interval_boundaries_are_right_closed():
    labels = interval_of([0.0, 1e-9, 1.0, 1.0001, 2.0, 5.0, 10.0, 20.0, 20.0001])
    assert labels.tolist() == ["0", "(0,1]", "(0,1]", "(1,2]", "(1,2]", "(2,5]", "(5,10]", "(10,20]", ">20"]


def test_interval_rejects_negative_distance():
    with pytest.raises(InvalidInputError):
        interval_of([-0.1])


def test_log_distance_adds_offset():
    assert_allclose(log_distance([0.0, 1.0], 0.025), np.log([0.025, 1.025]))


def test_standardize_uses_population_sd():
    frame = pd.DataFrame({"log_count": [1.0, 2.0, 3.0, 4.0], "omega": [0.1, 0.2, 0.2, 0.5]})
    out, report = standardize(frame, ["log_count", "omega"], sample="demo")
    assert out["y"].mean() == pytest.approx(0.0, abs=1e-12)
    assert out["y"].to_numpy().std() == pytest.approx(1.0)
    assert report.moments["log_count"].sd == pytest.approx(np.std([1, 2, 3, 4]))
    assert report.n_obs == 4
    assert "omega_std" in out.columns


def test_standardize_names_the_constant_column():
    frame = pd.DataFrame({"log_count": [1.0, 2.0], "omega": [0.3, 0.3]})
    with pytest.raises(DegenerateSampleError, match="omega"):
        standardize(frame, ["log_count", "omega"])


def test_period_dummies_follow_groups():
    frame = period_dummies(pd.Series(["2019-06", "2020-06", "2023-06", "2017-06"]), PeriodGroups())
    assert frame["covid"].tolist() == [0, 1, 0, 0]
    assert frame["recovery"].tolist() == [0, 0, 1, 0]
    assert frame["period_group"].tolist()[:3] == ["pre_covid", "covid", "recovery"]


def _clusters():
    return [
        AmenityCluster(cluster_id=1, peak_store="S000", centroid=GeoPoint(lat=37.5, lon=127.0),
                       members=["S000"], radius_km=0.0),
        AmenityCluster(cluster_id=2, peak_store="S001", centroid=GeoPoint(lat=km_north(37.5, 3.0), lon=127.0),
                       members=["S001"], radius_km=0.0),
    ]


def test_distance_table_is_symmetric_with_zero_diagonal():
    table = cluster_distance_table(_clusters())
    matrix = table["distance_km"].to_numpy().reshape(2, 2)
    assert matrix[0, 0] == 0.0 and matrix[1, 1] == 0.0
    assert matrix[0, 1] == matrix[1, 0]
    assert matrix[0, 1] == pytest.approx(3.0, rel=1e-4)


def _mapped_records():
    rows = []
    for period in ("2019-06", "2020-06"):
        rows += [
            {"period": period, "amenity_small": "A01", "count": 4, "dest_cluster": 1, "res_cluster": 1},
            {"period": period, "amenity_small": "A02", "count": 2, "dest_cluster": 1, "res_cluster": 2},
            {"period": period, "amenity_small": "A01", "count": 3, "dest_cluster": 2, "res_cluster": 1},
            {"period": period, "amenity_small": "A02", "count": 9, "dest_cluster": 2, "res_cluster": None},
        ]
    frame = pd.DataFrame(rows)
    frame["res_cluster"] = frame["res_cluster"].astype("Int64")
    return frame


def _omega(periods=("2019-06", "2020-06")):
    rows = [
        {"cluster_id": c, "amenity": a, "period": p, "omega": 0.1 * c + (0.3 if a == "A02" else 0.0) + 0.05 * k}
        for k, p in enumerate(periods) for c in (1, 2) for a in ("A01", "A02")
    ]
    return pd.DataFrame(rows)


def test_dense_panel_covers_every_combination():
    panel, report = build_panel(_mapped_records(), _omega(), cluster_distance_table(_clusters()), PeriodGroups())
    assert len(panel) == 2 * 2 * 2 * 2
    assert panel["count"].sum() == 2 * (4 + 2 + 3)
    assert (panel.loc[panel["count"] == 0, "log_count"] == 0).all()
    assert set(panel["interval"]) == {"0", "(2,5]"}
    assert set(panel.loc[panel["period"] == "2020-06", "covid"]) == {1}
    assert report.sample == "pooled"
    assert panel["y"].mean() == pytest.approx(0.0, abs=1e-12)


def test_positive_log_mode_keeps_observed_flows():
    panel, _ = build_panel(_mapped_records(), _omega(), cluster_distance_table(_clusters()), PeriodGroups(),
                           log_mode="log_positive")
    assert len(panel) == 6
    assert_allclose(panel["log_count"], np.log(panel["count"]))


def test_missing_omega_entry_raises():
    with pytest.raises(MissingKeyError):
        build_panel(_mapped_records(), _omega(periods=("2019-06",)), cluster_distance_table(_clusters()),
                    PeriodGroups())


def test_unknown_log_mode_is_rejected():
    with pytest.raises(InvalidInputError):
        build_panel(_mapped_records(), _omega(), cluster_distance_table(_clusters()), PeriodGroups(),
                    log_mode="log2")


def test_split_by_interval_has_every_label():
    panel, _ = build_panel(_mapped_records(), _omega(), cluster_distance_table(_clusters()), PeriodGroups())
    parts = split_by_interval(panel)
    assert list(parts) == INTERVALS
    assert sum(len(p) for p in parts.values()) == len(panel)
    assert parts[">20"].empty


def test_cells_map_to_nearest_store_cluster():
    stores = make_stores([(37.5, 127.0), (km_north(37.5, 3.0), 127.0)])
    membership = {"S000": 1, "S001": 2}
    registry = CellRegistry({
        "near1": GeoPoint(lat=km_north(37.5, 0.1), lon=127.0),
        "near2": GeoPoint(lat=km_north(37.5, 2.8), lon=127.0),
        "far": GeoPoint(lat=km_north(37.5, 1.5), lon=127.0),
    })
    records = pd.DataFrame({
        "period": ["2019-06"] * 3,
        "res_cell": ["near2", "far", "near1"],
        "dest_cell": ["near1", "near2", "far"],
        "amenity_small": ["A01"] * 3,
        "age_band": ["20s"] * 3,
        "gender": ["F"] * 3,
        "count": [1, 2, 3],
        "amount": [1.0, 2.0, 3.0],
    })
    mapped, report = map_cells_to_clusters(records, membership, stores, registry, max_km=0.8047)
    assert len(mapped) == 2
    assert mapped["dest_cluster"].tolist() == [1, 2]
    assert mapped["res_cluster"].iloc[0] == 2
    assert pd.isna(mapped["res_cluster"].iloc[1])
    assert report.n_records_dropped == 1
    assert report.n_records_non_resident == 1
    assert report.n_cells_unmapped == 1


def test_mapping_rejects_unknown_cells():
    stores = make_stores([(37.5, 127.0)])
    registry = CellRegistry({"c1": GeoPoint(lat=37.5, lon=127.0)})
    records = pd.DataFrame({
        "period": ["2019-06"], "res_cell": ["c1"], "dest_cell": ["ghost"], "amenity_small": ["A01"],
        "age_band": ["20s"], "gender": ["F"], "count": [1], "amount": [1.0],
    })
    with pytest.raises(MissingKeyError, match="ghost"):
        map_cells_to_clusters(records, {"S000": 1}, stores, registry)
