from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Any, Dict, List, Literal, Optional
from pathlib import Path
import yaml

from amenity_space.errors import ConfigError
from amenity_space.schemas import SynthConfig


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    CONFIG_FILE: Optional[str] = None
    OUTPUT_DIR: str = "output"
    CSV_FLOAT_FORMAT: str = "%.12g"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore"
    )


settings = Settings()


class InputPaths(BaseModel):
    stores: Optional[str] = None
    cells: Optional[str] = None
    transactions: Optional[str] = None
    profiles: Optional[str] = None


class ClusterParams(BaseModel):
    gamma: float = Field(7.58, gt=0)
    cutoff_km: float = Field(2.0, gt=0)
    peak_radius_km: float = Field(0.2, gt=0)
    max_assign_km: float = Field(0.8047, gt=0)
    min_peak_score: float = Field(5.0, ge=0)
    include_self: bool = True


class SpaceParams(BaseModel):
    consumer_group_mode: Literal["with_shopping_area", "residence_only"] = "with_shopping_area"
    phi_baseline_years: Optional[List[int]] = None
    phi_per_period: bool = False
    backbone_threshold: float = Field(0.4, ge=0, le=1)
    pair_table_k: int = Field(10, ge=1)


class PanelParams(BaseModel):
    log_mode: Literal["log1p", "log_positive"] = "log1p"
    distance_offset_km: float = Field(0.025, gt=0)
    cell_map_max_km: float = Field(0.8047, gt=0)
    periods: Optional[List[str]] = None


class RegressionParams(BaseModel):
    tol: float = Field(1e-8, gt=0)
    max_iter: int = Field(500, ge=1)
    specs: Optional[List[str]] = None
    marginal_grid_km: List[float] = Field(default_factory=lambda: [0.0, 1.0, 2.0, 5.0, 10.0, 20.0])

    @field_validator("marginal_grid_km")
    @classmethod
    def grid_nonnegative(cls, value: List[float]) -> List[float]:
        if not value or any(v < 0 for v in value):
            raise ValueError("grid must be a nonempty list of distances >= 0")
        return value


class TypologyParams(BaseModel):
    k: int = Field(5, ge=1)
    n_restarts: int = Field(16, ge=1)
    max_iter: int = Field(300, ge=1)


class FlowParams(BaseModel):
    distance_split_km: float = Field(1.0, gt=0)


class RankParams(BaseModel):
    top_n: int = Field(10, ge=1)


class PeriodGroups(BaseModel):
    pre_covid_years: List[int] = Field(default_factory=lambda: [2018, 2019])
    covid_years: List[int] = Field(default_factory=lambda: [2020, 2021, 2022])
    recovery_years: List[int] = Field(default_factory=lambda: [2023])

    @model_validator(mode="after")
    def groups_disjoint(self) -> "PeriodGroups":
        pre, covid, recovery = set(self.pre_covid_years), set(self.covid_years), set(self.recovery_years)
        if pre & covid or pre & recovery or covid & recovery:
            raise ValueError("period groups must not share years")
        return self

    def group_of(self, year: int) -> Optional[str]:
        if year in self.pre_covid_years:
            return "pre_covid"
        if year in self.covid_years:
            return "covid"
        if year in self.recovery_years:
            return "recovery"
        return None

    def years(self, group: str) -> List[int]:
        return {
            "pre_covid": self.pre_covid_years,
            "covid": self.covid_years,
            "recovery": self.recovery_years,
        }[group]


class PipelineConfig(BaseModel):
    seed: int = 0
    output_dir: Optional[str] = None
    inputs: InputPaths = Field(default_factory=InputPaths)
    clusters: ClusterParams = Field(default_factory=ClusterParams)
    space: SpaceParams = Field(default_factory=SpaceParams)
    panel: PanelParams = Field(default_factory=PanelParams)
    regression: RegressionParams = Field(default_factory=RegressionParams)
    typology: TypologyParams = Field(default_factory=TypologyParams)
    flows: FlowParams = Field(default_factory=FlowParams)
    rank: RankParams = Field(default_factory=RankParams)
    periods: PeriodGroups = Field(default_factory=PeriodGroups)
    synth: SynthConfig = Field(default_factory=SynthConfig)

    @property
    def phi_baseline_years(self) -> List[int]:
        return self.space.phi_baseline_years or self.periods.pre_covid_years

    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir or settings.OUTPUT_DIR)


def _set_dotted(data: Dict[str, Any], dotted_key: str, value: Any) -> None:
    parts = dotted_key.split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted_key, "cannot override a scalar with a nested key")
    node[parts[-1]] = value


def _validate(data: Dict[str, Any]) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        parameter = ".".join(str(part) for part in first["loc"])
        raise ConfigError(parameter, first["msg"]) from e


def load_pipeline_config(
    path: Optional[str] = None,
    overrides: Optional[List[str]] = None
) -> PipelineConfig:
    """
    Load the pipeline configuration.

    Args:
        path: YAML file; falls back to settings.CONFIG_FILE, then to defaults
        overrides: "section.key=value" strings applied after the file

    Returns:
        Validated PipelineConfig
    """
    path = path or settings.CONFIG_FILE
    data: Dict[str, Any] = {}
    if path:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError("config", f"file not found: {config_path}")
        with config_path.open(encoding="utf-8") as handle:
            data = yaml.safe_load(handle) or {}
        if not isinstance(data, dict):
            raise ConfigError("config", f"{config_path} must contain a mapping")
        base_dir = config_path.parent
        # relative input paths are resolved against the config file location
        for key, value in (data.get("inputs") or {}).items():
            if value and not Path(value).is_absolute():
                data["inputs"][key] = str(base_dir / value)

    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(item, "override must look like section.key=value")
        key, raw = item.split("=", 1)
        _set_dotted(data, key.strip(), yaml.safe_load(raw))

    return _validate(data)


def dump_pipeline_config(config: PipelineConfig, path: Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        yaml.safe_dump(config.model_dump(mode="json"), handle, sort_keys=True)
