from amenity_space.errors import ConvergenceError, InvalidInputError, RankDeficiencyError, SpecError
from amenity_space.schemas import RegressionSpec
from amenity_space.services.fe_regression import (
    cluster_cov_twoway, factor_codes, fit, marginal_effects, ols, singleton_mask, stars_for, within_transform
)
from amenity_space.services.panel_builder import interval_of, log_distance
from amenity_space.services.regression_specs import TABLES, available_specs, get_spec, resolve_specs
from amenity_space.services.reporting import format_table
from numpy.testing import assert_allclose, assert_array_equal
import numpy as np
import pandas as pd
import pytest


def _dummies(codes: np.ndarray, drop_first: bool) -> np.ndarray:
    levels = np.arange(codes.max() + 1)
    matrix = (codes[:, None] == levels[None, :]).astype(float)
    return matrix[:, 1:] if drop_first else matrix


@pytest.mark.parametrize("seed", range(20))
def test_absorbed_ols_matches_explicit_dummies(seed):
    rng = np.random.default_rng(seed)
    n = 500
    f1, f2, f3 = rng.integers(0, 12, n), rng.integers(0, 9, n), rng.integers(0, 5, n)
    X = rng.normal(size=(n, 2)) + 0.3 * f1[:, None]
    y = X @ np.array([0.7, -1.2]) + 0.5 * f1 - 0.2 * f2 + 0.1 * f3 + rng.normal(size=n)

    codes = [factor_codes(f)[0] for f in (f1, f2, f3)]
    demeaned, _ = within_transform(np.column_stack([y, X]), codes, tol=1e-12, max_iter=10000)
    beta, _ = ols(demeaned[:, 0], demeaned[:, 1:], ["x1", "x2"])

    design = np.column_stack([X, _dummies(codes[0], False), _dummies(codes[1], True), _dummies(codes[2], True)])
    reference = np.linalg.lstsq(design, y, rcond=None)[0][:2]
    assert np.max(np.abs(beta - reference)) < 1e-6


def _sandwich_by_loops(X, u, groups):
    n, k = X.shape
    bread = np.linalg.inv(X.T @ X)
    labels = sorted(set(groups))
    meat = np.zeros((k, k))
    for g in labels:
        score = np.zeros(k)
        for i in range(n):
            if groups[i] == g:
                score += X[i] * u[i]
        meat += np.outer(score, score)
    G = len(labels)
    return G / (G - 1) * (n - 1) / (n - k) * bread @ meat @ bread


@pytest.mark.parametrize("seed", range(5))
def test_twoway_covariance_matches_direct_sandwich(seed):
    rng = np.random.default_rng(100 + seed)
    n = 500
    X = rng.normal(size=(n, 3))
    a = rng.integers(0, 20, n)
    b = rng.integers(0, 15, n)
    u = rng.normal(size=n) + 0.5 * rng.normal(size=20)[a] + 0.5 * rng.normal(size=15)[b]

    V, repaired = cluster_cov_twoway(X, u, a, b)
    pairs = [f"{i}|{j}" for i, j in zip(a, b)]
    oracle = _sandwich_by_loops(X, u, list(a)) + _sandwich_by_loops(X, u, list(b)) \
        - _sandwich_by_loops(X, u, pairs)
    oracle = (oracle + oracle.T) / 2
    if repaired:
        vals, vecs = np.linalg.eigh(oracle)
        oracle = (vecs * np.clip(vals, 0, None)) @ vecs.T
    assert_allclose(V, oracle, rtol=1e-8, atol=1e-14)


def test_identical_dimensions_collapse_to_one_way():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 2))
    u = rng.normal(size=200)
    groups = rng.integers(0, 10, 200)
    two_way, repaired = cluster_cov_twoway(X, u, groups, groups)
    one_way, _ = cluster_cov_twoway(X, u, groups)
    assert not repaired
    assert_array_equal(two_way, one_way)


def test_single_cluster_is_rejected():
    X = np.random.default_rng(0).normal(size=(20, 1))
    with pytest.raises(InvalidInputError):
        cluster_cov_twoway(X, np.ones(20), np.zeros(20))


def test_rank_deficiency_names_dependent_columns():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 2))
    X = np.column_stack([X, X[:, 0] + X[:, 1]])
    with pytest.raises(RankDeficiencyError) as excinfo:
        ols(rng.normal(size=50), X, ["a", "b", "c"])
    assert len(excinfo.value.dependent_columns) == 1
    assert excinfo.value.dependent_columns[0] in {"a", "b", "c"}


def test_single_factor_demeaning_is_exact():
    x = np.array([1.0, 3.0, 10.0, 14.0])
    out, sweeps = within_transform(x, [np.array([0, 0, 1, 1])])
    assert sweeps == 1
    assert_allclose(out[:, 0], [-1, 1, -2, 2])


def test_demeaning_reports_non_convergence():
    rng = np.random.default_rng(5)
    codes = [rng.integers(0, 30, 300), rng.integers(0, 30, 300)]
    with pytest.raises(ConvergenceError) as excinfo:
        within_transform(rng.normal(size=(300, 1)), codes, tol=1e-300, max_iter=2)
    assert excinfo.value.iterations == 2


def test_singletons_are_dropped_iteratively():
    a = np.array([0, 0, 1, 1, 2])
    b = np.array([0, 1, 1, 1, 0])
    keep = singleton_mask([a, b])
    # row 4 is alone in a; then row 0 is alone in b; then row 1 is alone in a
    assert keep.tolist() == [False, False, True, True, False]


def test_stars():
    assert stars_for(0.001) == "***"
    assert stars_for(0.03) == "**"
    assert stars_for(0.07) == "*"
    assert stars_for(0.5) == ""


def _panel(seed=0, n_dest=8, n_res=8, n_amen=5, years=(2019, 2020, 2021, 2023)):
    rng = np.random.default_rng(seed)
    d, r, p, t = np.meshgrid(np.arange(n_dest), np.arange(n_res), np.arange(n_amen), np.arange(len(years)),
                             indexing="ij")
    d, r, p, t = d.ravel(), r.ravel(), p.ravel(), t.ravel()
    year = np.array(years)[t]
    distance = np.abs(d - r) * 1.7
    omega = rng.uniform(0, 1, len(d))
    log_dist = log_distance(distance)
    covid = np.isin(year, [2020, 2021, 2022]).astype(int)
    recovery = (year == 2023).astype(int)
    zw = (omega - omega.mean()) / omega.std()
    zd = (log_dist - log_dist.mean()) / log_dist.std()
    latent = 2 + 0.3 * zw - 0.5 * zd - 0.2 * zw * zd + 0.1 * d - 0.05 * r + rng.normal(0, 0.3, len(d))
    return pd.DataFrame({
        "dest_cluster": d, "res_cluster": r, "amenity": [f"A{k}" for k in p], "period": [f"{y}-06" for y in year],
        "count": np.round(np.exp(latent)).astype(int), "log_count": np.log1p(np.round(np.exp(latent))),
        "omega": omega, "distance_km": distance, "log_dist": log_dist, "interval": interval_of(distance), "year": year,
        "period_group": np.where(covid == 1, "covid", np.where(recovery == 1, "recovery", "pre_covid")),
        "covid": covid, "recovery": recovery,
    })


def test_fit_recovers_interaction_sign():
    result = fit(get_spec("eq6_pooled"), _panel())
    assert result.names == ["omega", "log_dist", "omega_x_log_dist"]
    assert result.coefficients["omega_x_log_dist"] < 0
    assert result.coefficients["omega"] > 0
    assert result.fixed_effect_levels == {"dest_cluster": 8, "res_cluster": 8, "amenity": 5, "year": 4}
    assert result.n_clusters == {"dest_cluster": 8, "res_cluster": 8}
    assert 0 <= result.within_r2 <= 1
    assert result.stars["omega_x_log_dist"] == "***"


def test_fit_on_one_year_drops_year_effect():
    result = fit(get_spec("eq6_pre_covid"), _panel())
    assert "year" not in result.fixed_effect_levels
    assert result.n_obs == 8 * 8 * 5


def test_fit_on_empty_sample_raises():
    with pytest.raises(InvalidInputError):
        fit(get_spec("eq7_interval_20plus"), _panel())


def test_type_spec_without_types_raises():
    with pytest.raises(SpecError, match="typology"):
        fit(get_spec("eq7_type_A"), _panel())


def test_unknown_regressor_is_a_spec_error():
    spec = RegressionSpec(name="custom", regressors=["omega", "temperature"])
    with pytest.raises(SpecError):
        fit(spec, _panel())


def test_marginal_curve_decreases_with_negative_interaction():
    result = fit(get_spec("eq6_pooled"), _panel())
    curve = marginal_effects(result)
    assert curve.distance_km == [0.0, 1.0, 2.0, 5.0, 10.0, 20.0]
    assert all(a > b for a, b in zip(curve.effect, curve.effect[1:]))
    assert all(lo <= e <= hi for lo, e, hi in zip(curve.lower, curve.effect, curve.upper))
    moments = result.standardization.moments["log_dist"]
    assert curve.log_dist_std[0] == pytest.approx((np.log(0.025) - moments.mean) / moments.sd)


def test_marginal_curve_needs_the_interaction():
    result = fit(get_spec("eq7_interval_0"), _panel())
    with pytest.raises(SpecError):
        marginal_effects(result)


def test_registry_and_lookup():
    names = available_specs()
    assert names[0] == "eq6_pooled"
    assert "eq7_interval_20plus" in names and "eq7_type_E" in names
    assert [s.name for s in resolve_specs(["eq7_pooled", "eq6_covid"])] == ["eq7_pooled", "eq6_covid"]
    assert get_spec("eq6_pooled", tol=1e-6).tol == 1e-6
    with pytest.raises(SpecError) as excinfo:
        get_spec("eq8")
    assert "eq7_interval_0" in str(excinfo.value)
    assert sum(len(v) for v in TABLES.values()) == len(names)


def test_table_marks_skipped_columns():
    result = fit(get_spec("eq6_pooled"), _panel())
    text = format_table([result, None], ["All", "Empty"], heading="demo")
    assert text.splitlines()[0] == "demo"
    assert "omega_ipt x log(distance)_ij" in text
    assert "Observations" in text and "1,280" in text
    assert "Clustered (Destination & Residence)" in text


@pytest.mark.parametrize("seed", range(5))
def test_nested_factors_match_explicit_dummies(seed):
    rng = np.random.default_rng(seed)
    n = 400
    fine = rng.integers(0, 12, n)
    coarse = fine // 4
    other = rng.integers(0, 5, n)
    X = rng.normal(size=(n, 2)) + 0.2 * coarse[:, None]
    y = X @ np.array([0.4, -0.9]) + 0.3 * fine - 0.6 * coarse + 0.2 * other + rng.normal(size=n)

    codes = [factor_codes(f)[0] for f in (fine, coarse, other)]
    demeaned, _ = within_transform(np.column_stack([y, X]), codes, tol=1e-12, max_iter=10000)
    beta, _ = ols(demeaned[:, 0], demeaned[:, 1:], ["x1", "x2"])

    # coarse dummies are collinear with the fine ones; lstsq still pins the slopes
    design = np.column_stack([X, _dummies(codes[0], False), _dummies(codes[1], True), _dummies(codes[2], True)])
    reference = np.linalg.lstsq(design, y, rcond=None)[0][:2]
    assert_allclose(beta, reference, atol=1e-6)


def test_nested_factor_adds_nothing_to_the_finer_one(rng):
    fine = rng.integers(0, 15, 300)
    data = rng.normal(size=(300, 3))
    codes_fine = factor_codes(fine)[0]
    codes_coarse = factor_codes(fine // 5)[0]
    both, _ = within_transform(data, [codes_fine, codes_coarse], tol=1e-12, max_iter=1000)
    alone, _ = within_transform(data, [codes_fine], tol=1e-12, max_iter=1000)
    assert_allclose(both, alone, atol=1e-10)


def test_shifting_the_outcome_leaves_slopes_unchanged():
    panel = _panel()
    shifted = panel.assign(log_count=panel["log_count"] + 5.0)
    base = fit(get_spec("eq6_pooled"), panel)
    moved = fit(get_spec("eq6_pooled"), shifted)
    for name in base.names:
        assert moved.coefficients[name] == pytest.approx(base.coefficients[name], abs=1e-9)
        assert moved.se[name] == pytest.approx(base.se[name], abs=1e-9)


def test_fit_ignores_row_order():
    panel = _panel()
    shuffled = panel.sample(frac=1.0, random_state=3).reset_index(drop=True)
    base = fit(get_spec("eq6_pooled"), panel)
    again = fit(get_spec("eq6_pooled"), shuffled)
    assert again.n_obs == base.n_obs
    for name in base.names:
        assert again.coefficients[name] == pytest.approx(base.coefficients[name], abs=1e-7)
        assert again.se[name] == pytest.approx(base.se[name], abs=1e-7)


@pytest.mark.parametrize("spec_name", ["eq6_pooled", "eq7_pooled", "eq6_covid"])
def test_total_r2_is_at_least_within_r2(spec_name):
    result = fit(get_spec(spec_name), _panel(seed=4))
    assert result.r2 >= result.within_r2 - 1e-12


def test_singletons_are_dropped_before_standardising():
    panel = _panel()
    lone = panel.iloc[[0]].assign(dest_cluster=99, log_count=50.0, omega=0.99)
    result = fit(get_spec("eq6_pooled"), pd.concat([panel, lone], ignore_index=True))
    base = fit(get_spec("eq6_pooled"), panel)

    assert result.n_dropped_singletons == 1
    assert result.n_obs == len(panel)
    assert result.standardization.n_obs == len(panel)
    moments = result.standardization.moments
    assert moments["log_count"].mean == pytest.approx(panel["log_count"].mean())
    assert moments["log_count"].sd == pytest.approx(panel["log_count"].std(ddof=0))
    assert moments["omega"].mean == pytest.approx(panel["omega"].mean())
    for name in base.names:
        assert result.coefficients[name] == pytest.approx(base.coefficients[name], abs=1e-9)
