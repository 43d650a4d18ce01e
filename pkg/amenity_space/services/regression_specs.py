"""
Named regression specifications.

Each name is one column of the regression tables: the pooled and per-period
interaction model, the pooled period-interaction model, one model per
distance interval and one per destination cluster type.
"""
from typing import Dict, List, Optional, Sequence
from amenity_space.errors import SpecError
from amenity_space.schemas import RegressionSpec
from amenity_space.services.panel_builder import INTERVALS

TYPE_LABELS = ["A", "B", "C", "D", "E"]

INTERACTION_REGRESSORS = ["omega", "log_dist", "omega_x_log_dist"]
PERIOD_REGRESSORS = ["omega", "log_dist", "omega_x_covid", "omega_x_recovery"]

INTERVAL_SLUGS = {
    "0": "0",
    "(0,1]": "0_1",
    "(1,2]": "1_2",
    "(2,5]": "2_5",
    "(5,10]": "5_10",
    "(10,20]": "10_20",
    ">20": "20plus",
}

PERIOD_TITLES = {
    "pre_covid": "pre-Covid",
    "covid": "Covid",
    "recovery": "Recovery",
}


def _build_registry(tol: float = 1e-8, max_iter: int = 500) -> Dict[str, RegressionSpec]:
    specs: List[RegressionSpec] = [
        RegressionSpec(name="eq6_pooled", title="All", regressors=INTERACTION_REGRESSORS)
    ]
    for group, title in PERIOD_TITLES.items():
        specs.append(RegressionSpec(
            name=f"eq6_{group}", title=title, regressors=INTERACTION_REGRESSORS, period_group=group
        ))
    specs.append(RegressionSpec(
        name="eq7_pooled",
        title="All (period interactions)",
        regressors=["omega", "log_dist", "omega_x_log_dist", "omega_x_covid", "omega_x_recovery"]
    ))
    for interval in INTERVALS:
        # distance is a single value in the 0 km interval
        regressors = [r for r in PERIOD_REGRESSORS if not (interval == "0" and r == "log_dist")]
        specs.append(RegressionSpec(
            name=f"eq7_interval_{INTERVAL_SLUGS[interval]}",
            title=f"d={interval}" if interval == "0" else f"d in {interval}",
            regressors=regressors,
            interval=interval
        ))
    for label in TYPE_LABELS:
        specs.append(RegressionSpec(
            name=f"eq7_type_{label}", title=f"Type {label}", regressors=PERIOD_REGRESSORS, dest_type=label
        ))
    return {s.name: s.model_copy(update={"tol": tol, "max_iter": max_iter}) for s in specs}


SPECS = _build_registry()

TABLES = {
    "interaction": ["eq6_pooled", "eq6_pre_covid", "eq6_covid", "eq6_recovery", "eq7_pooled"],
    "interval": [f"eq7_interval_{INTERVAL_SLUGS[i]}" for i in INTERVALS],
    "type": [f"eq7_type_{label}" for label in TYPE_LABELS],
}


def available_specs() -> List[str]:
    return list(SPECS)


def get_spec(name: str, tol: Optional[float] = None, max_iter: Optional[int] = None) -> RegressionSpec:
    try:
        spec = SPECS[name]
    except KeyError:
        raise SpecError(f"Unknown regression spec '{name}'", available_specs())
    update = {}
    if tol is not None:
        update["tol"] = tol
    if max_iter is not None:
        update["max_iter"] = max_iter
    return spec.model_copy(update=update) if update else spec


def resolve_specs(
    names: Optional[Sequence[str]],
    tol: Optional[float] = None,
    max_iter: Optional[int] = None
) -> List[RegressionSpec]:
    """Specs by name in the given order; None means every registered spec."""
    return [get_spec(n, tol, max_iter) for n in (names or available_specs())]
