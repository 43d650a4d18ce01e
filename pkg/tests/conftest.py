from pathlib import Path
from typing import List
from amenity_space.config import PeriodGroups
from amenity_space.schemas import GeoPoint, StorePoint, SynthConfig
from amenity_space.services.synth import gen_transactions, gen_world
from amenity_space.main import main
import numpy as np
import pytest
import yaml

# a world small enough for the whole pipeline to run in seconds
TINY_SYNTH = {
    "seed": 7,
    "n_peaks": 6,
    "stores_per_peak": 40,
    "n_amenities": 12,
    "n_blocks": 3,
    "n_residence_cells": 36,
    "n_visitor_cells": 30,
    "baseline_groups_per_cluster": 80,
    "visitor_groups_per_cluster": 15,
    "periods": ["2019-06", "2020-06", "2021-06", "2023-06"],
    "baseline_periods": ["2018-06"],
}


def make_stores(coords: List[tuple], category: str = "A01") -> List[StorePoint]:
    return [
        StorePoint(
            store_id=f"S{k:03d}",
            location=GeoPoint(lat=lat, lon=lon),
            category_small=category,
            category_large="L1"
        )
        for k, (lat, lon) in enumerate(coords)
    ]


def km_north(lat: float, km: float) -> float:
    return lat + km / 111.19508


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def tiny_synth_config() -> SynthConfig:
    return SynthConfig(**TINY_SYNTH)


@pytest.fixture(scope="session")
def tiny_world(tiny_synth_config):
    return gen_world(tiny_synth_config)


@pytest.fixture(scope="session")
def tiny_transactions(tiny_world):
    return gen_transactions(tiny_world, PeriodGroups())


def write_config(path: Path, data: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        yaml.safe_dump(data, handle)
    return path


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    """synth + run-all on the tiny world; returns (data dir, output dir)."""
    root = tmp_path_factory.mktemp("pipeline")
    base = write_config(root / "base.yaml", {"synth": TINY_SYNTH, "typology": {"n_restarts": 4}})
    data, out = root / "data", root / "out"
    assert main(["--config", str(base), "synth", "--out", str(data)]) == 0
    assert main(["--config", str(data / "config.yaml"), "--output-dir", str(out), "run-all"]) == 0
    return data, out
