from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Any, Dict, List, Optional


class GeoPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    lat: float = Field(ge=-90, le=90, allow_inf_nan=False)
    lon: float = Field(ge=-180, le=180, allow_inf_nan=False)


class StorePoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    store_id: str = Field(min_length=1)
    location: GeoPoint
    category_small: str = Field(min_length=1)
    category_large: str = Field(min_length=1)


class AmenityCluster(BaseModel):
    model_config = ConfigDict(frozen=True)

    cluster_id: int
    peak_store: str
    centroid: GeoPoint
    members: List[str]
    radius_km: float = Field(ge=0)

    @model_validator(mode="after")
    def peak_is_member(self) -> "AmenityCluster":
        if not self.members:
            raise ValueError(f"cluster {self.cluster_id} has no members")
        if self.peak_store not in self.members:
            raise ValueError(f"peak {self.peak_store} is not a member of cluster {self.cluster_id}")
        return self

    @property
    def n_members(self) -> int:
        return len(self.members)


class ClusterDetectionReport(BaseModel):
    n_stores: int
    n_peaks: int
    n_clusters: int
    n_unassigned: int
    unassigned: List[str] = []
    mean_radius_km: float
    median_radius_km: float
    truncation_bound: float
    gamma: float
    cutoff_km: float


class CellMappingReport(BaseModel):
    n_cells: int
    n_cells_mapped: int
    n_cells_unmapped: int
    n_records_in: int
    n_records_dropped: int
    n_records_non_resident: int
    max_distance_km: float


class ClusterProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    cluster_id: int
    floating_density: float = Field(ge=0, allow_inf_nan=False)
    working_density: float = Field(ge=0, allow_inf_nan=False)
    residential_density: float = Field(ge=0, allow_inf_nan=False)


class VariableMoments(BaseModel):
    mean: float
    sd: float = Field(gt=0)


class StandardizationReport(BaseModel):
    sample: str
    n_obs: int
    moments: Dict[str, VariableMoments]


class RegressionSpec(BaseModel):
    """One named column of the regression tables."""
    name: str
    title: str = ""
    outcome: str = "y"
    regressors: List[str]
    fixed_effects: List[str] = Field(default_factory=lambda: ["dest_cluster", "res_cluster", "amenity", "year"])
    cluster_by: List[str] = Field(default_factory=lambda: ["dest_cluster", "res_cluster"])
    period_group: Optional[str] = None
    interval: Optional[str] = None
    dest_type: Optional[str] = None
    tol: float = Field(1e-8, gt=0)
    max_iter: int = Field(500, ge=1)

    @field_validator("fixed_effects")
    @classmethod
    def known_factors(cls, value: List[str]) -> List[str]:
        allowed = {"dest_cluster", "res_cluster", "amenity", "year"}
        unknown = [v for v in value if v not in allowed]
        if unknown:
            raise ValueError(f"unknown fixed-effect factors: {unknown}")
        return value

    @field_validator("cluster_by")
    @classmethod
    def two_dimensions(cls, value: List[str]) -> List[str]:
        if len(value) not in (1, 2):
            raise ValueError("cluster_by takes one or two dimensions")
        return value


class SynthConfig(BaseModel):
    seed: int = 0
    n_peaks: int = Field(20, ge=1)
    stores_per_peak: int = Field(100, ge=1)
    peak_spacing_km: float = Field(2.0, gt=0)
    store_scatter_sd_km: float = Field(0.15, ge=0)
    # stores farther than this many sd from their peak are redrawn
    store_scatter_truncation_sd: float = Field(2.0, gt=0)
    origin_lat: float = Field(37.55, ge=-80, le=80)
    origin_lon: float = Field(126.95, ge=-180, le=180)
    cell_pitch_km: float = Field(0.05, gt=0)

    n_amenities: int = Field(48, ge=2)
    n_blocks: int = Field(6, ge=1)
    within_block_prob: float = Field(0.8, ge=0, le=1)
    cross_block_prob: float = Field(0.05, ge=0, le=1)
    group_specialization_boost: float = Field(10.0, gt=1)
    cluster_specialization_share: float = Field(0.4, gt=0, lt=1)
    cluster_specialization_boost: float = Field(3.0, gt=1)
    specialization_flip_prob: float = Field(0.1, ge=0, le=1)
    visitor_base_count: float = Field(150.0, gt=0)
    visitor_noise_sd: float = Field(0.15, ge=0)

    n_residence_cells: int = Field(400, ge=1)
    residence_scatter_km: float = Field(0.25, ge=0)
    n_visitor_cells: int = Field(100, ge=1)
    visitor_ring_km: float = Field(8.0, gt=0)
    baseline_groups_per_cluster: int = Field(120, ge=1)
    visitor_groups_per_cluster: int = Field(20, ge=1)
    age_bands: List[str] = Field(default_factory=lambda: ["20s", "30s", "40s", "50s", "60s", "70s", "80s"])
    genders: List[str] = Field(default_factory=lambda: ["F", "M"])

    beta_0: float = 6.0
    beta_omega: float = 0.1
    beta_dist: float = -0.5
    beta_int: float = -0.3
    beta_covid: float = -0.15
    beta_recovery: float = -0.08
    noise_sd: float = Field(0.5, ge=0)
    fe_sd: float = Field(0.3, ge=0)
    period_shift_sd: float = Field(0.1, ge=0)
    fixed_point_max_iter: int = Field(10, ge=1)

    periods: List[str] = Field(default_factory=lambda: ["2019-06", "2020-06", "2021-06", "2022-06", "2023-06"])
    baseline_periods: List[str] = Field(default_factory=lambda: ["2018-06"])

    n_archetypes: int = Field(5, ge=1, le=5)
    profile_noise_sd: float = Field(0.05, ge=0)

    @model_validator(mode="after")
    def separable(self) -> "SynthConfig":
        if self.n_peaks > 1 and self.peak_spacing_km <= 4 * self.store_scatter_sd_km:
            raise ValueError(
                f"peak_spacing_km ({self.peak_spacing_km}) must exceed 4 x store_scatter_sd_km "
                f"({self.store_scatter_sd_km}) for peaks to stay separable"
            )
        if self.n_amenities % self.n_blocks:
            raise ValueError("n_amenities must be a multiple of n_blocks")
        if not self.periods:
            raise ValueError("periods must not be empty")
        if set(self.periods) & set(self.baseline_periods):
            raise ValueError("baseline_periods must not overlap periods")
        return self


class GroundTruthManifest(BaseModel):
    generator_version: str
    seed: int
    config: SynthConfig
    peaks: List[GeoPoint]
    store_peak: Dict[str, int]
    cell_peak: Dict[str, int]
    amenity_block: Dict[str, int]
    peak_cluster: Dict[int, int] = {}
    peak_archetype: Dict[int, int]
    archetype_centers: List[List[float]]
    cluster_params: Dict[str, Any] = {}
    coefficients: Dict[str, float]
    standardized_coefficients: Dict[str, float] = {}
    outcome_sd: Optional[float] = None
    expected_phi_within: float
    expected_phi_cross: float
    omega_consistent: bool = False
    fixed_point_iterations: int = 0
    max_log_rounding_error: float = 0.0
    n_records: int = 0


class RunMetadata(BaseModel):
    stage: str
    started_at: str
    finished_at: Optional[str] = None
    duration_s: Optional[float] = None
    versions: Dict[str, str] = {}
    seed: Optional[int] = None
    config: Dict[str, Any] = {}
    inputs: Dict[str, str] = {}
    outputs: List[str] = []
    warnings: List[str] = []
    report: Dict[str, Any] = {}


class ErrorReport(BaseModel):
    stage: str
    error_code: str
    detail: str
    extra: Dict[str, Any] = {}


class FitResult(BaseModel):
    spec: RegressionSpec
    names: List[str]
    coefficients: Dict[str, float]
    se: Dict[str, float]
    pvalues: Dict[str, float]
    stars: Dict[str, str]
    covariance: List[List[float]]
    n_obs: int
    n_dropped_singletons: int = 0
    r2: float
    within_r2: float
    iterations: int
    psd_repaired: bool = False
    fixed_effect_levels: Dict[str, int] = {}
    n_clusters: Dict[str, int] = {}
    standardization: StandardizationReport
    log_mode: str = "log1p"
    distance_offset_km: float = 0.025

    def cov(self, a: str, b: str) -> float:
        return self.covariance[self.names.index(a)][self.names.index(b)]


class MarginalCurve(BaseModel):
    spec_name: str
    distance_km: List[float]
    log_dist_std: List[float]
    effect: List[float]
    se: List[float]
    lower: List[float]
    upper: List[float]
