from pathlib import Path
from amenity_space.config import Settings
import pytest

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def clean_env(monkeypatch):
    for name in ("LOG_LEVEL", "LOG_FORMAT", "CONFIG_FILE", "OUTPUT_DIR", "CSV_FLOAT_FORMAT"):
        monkeypatch.delenv(name, raising=False)


def test_env_example_points_at_no_missing_config_file(clean_env):
    settings = Settings(_env_file=ROOT / ".env.example")
    assert settings.CONFIG_FILE is None or (ROOT / settings.CONFIG_FILE).is_file()
    assert settings.OUTPUT_DIR == "output"
    assert settings.LOG_LEVEL == "INFO"


def test_env_file_sets_the_config_file(clean_env, tmp_path):
    env = tmp_path / ".env"
    env.write_text("CONFIG_FILE=custom.yaml\n", encoding="utf-8")
    assert Settings(_env_file=env).CONFIG_FILE == "custom.yaml"
