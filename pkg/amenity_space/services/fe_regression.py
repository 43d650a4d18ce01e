"""
Fixed-Effects Regression Engine

Handles:
- Absorbing destination / residence / amenity / year effects by alternating projections
- OLS through pivoted QR with rank checks
- One- and two-way cluster-robust covariance
- Marginal effect of relatedness density along distance
"""
from typing import Optional, Sequence, Tuple
from scipy import linalg
from scipy.stats import norm
from amenity_space.errors import (
    ConvergenceError,
    InvalidInputError,
    RankDeficiencyError,
    SpecError,
)
from amenity_space.schemas import FitResult, MarginalCurve, RegressionSpec
from amenity_space.services.panel_builder import DISTANCE_OFFSET_KM, log_distance, standardize
import numpy as np
import pandas as pd
import logging

logger = logging.getLogger(__name__)

FACTOR_ORDER = ["dest_cluster", "res_cluster", "amenity", "year"]

# regressor -> (raw columns it needs, builder over the standardised sample)
REGRESSORS = {
    "omega": (["omega"], lambda s: s["omega_std"]),
    "log_dist": (["log_dist"], lambda s: s["log_dist_std"]),
    "omega_x_log_dist": (["omega", "log_dist"], lambda s: s["omega_std"] * s["log_dist_std"]),
    "omega_x_covid": (["omega"], lambda s: s["omega_std"] * s["covid"]),
    "omega_x_recovery": (["omega"], lambda s: s["omega_std"] * s["recovery"]),
    "covid": ([], lambda s: s["covid"].astype(float)),
    "recovery": ([], lambda s: s["recovery"].astype(float)),
}

STAR_LEVELS = [(0.01, "***"), (0.05, "**"), (0.1, "*")]


def factor_codes(values) -> Tuple[np.ndarray, int]:
    """Dense integer codes over sorted levels, so codes do not depend on row order."""
    _, codes = np.unique(np.asarray(values), return_inverse=True)
    codes = codes.ravel()
    return codes, int(codes.max()) + 1 if len(codes) else 0


def _group_means(x: np.ndarray, codes: np.ndarray, n_levels: int, sizes: np.ndarray) -> np.ndarray:
    means = np.empty((n_levels, x.shape[1]))
    for c in range(x.shape[1]):
        means[:, c] = np.bincount(codes, weights=x[:, c], minlength=n_levels) / sizes
    return means


def within_transform(
    columns: np.ndarray,
    factors: Sequence[np.ndarray],
    tol: float = 1e-8,
    max_iter: int = 500
) -> Tuple[np.ndarray, int]:
    """
    Sweep out every factor's group means until a full sweep moves no value by tol.

    Args:
        columns: (n, m) array to demean
        factors: Integer code arrays, applied in the given order
        tol: Max absolute change of a full sweep at convergence
        max_iter: Sweep limit

    Returns:
        (demeaned columns, sweeps performed)

    Raises:
        ConvergenceError: max_iter sweeps without reaching tol
    """
    x = np.array(columns, dtype=float, copy=True)
    if x.ndim == 1:
        x = x[:, None]
    if not factors:
        return x - x.mean(axis=0, keepdims=True), 1

    prepared = []
    for codes in factors:
        codes = np.asarray(codes)
        if len(codes) != len(x):
            raise InvalidInputError("Factor codes do not align with the data rows")
        n_levels = int(codes.max()) + 1
        sizes = np.bincount(codes, minlength=n_levels).astype(float)
        if (sizes == 0).any():
            raise InvalidInputError("Every fixed-effect level needs at least one observation")
        prepared.append((codes, n_levels, sizes))

    if len(prepared) == 1:
        codes, n_levels, sizes = prepared[0]
        return x - _group_means(x, codes, n_levels, sizes)[codes], 1

    delta = np.inf
    for iteration in range(1, max_iter + 1):
        before = x.copy()
        for codes, n_levels, sizes in prepared:
            x -= _group_means(x, codes, n_levels, sizes)[codes]
        delta = float(np.max(np.abs(x - before))) if x.size else 0.0
        logger.debug(f"Demeaning sweep {iteration}: max change {delta:.3e}")
        if delta < tol:
            return x, iteration
    raise ConvergenceError("Fixed-effect demeaning did not converge", last_delta=delta, iterations=max_iter)


def singleton_mask(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Rows to keep after repeatedly dropping observations alone in some fixed-effect level."""
    if not factors:
        return np.ones(0, dtype=bool)
    keep = np.ones(len(factors[0]), dtype=bool)
    while True:
        drop = np.zeros_like(keep)
        for codes in factors:
            sizes = np.bincount(codes[keep], minlength=int(codes.max()) + 1)
            drop |= keep & (sizes[codes] == 1)
        if not drop.any():
            return keep
        keep &= ~drop


def ols(y: np.ndarray, X: np.ndarray, names: Optional[Sequence[str]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Least squares via column-pivoted QR.

    Raises:
        RankDeficiencyError: naming the columns that are linear combinations
            of the others
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    names = list(names) if names is not None else [f"x{c}" for c in range(k)]
    if n < k:
        raise InvalidInputError(f"{n} observations for {k} regressors")

    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if k and diag[0] == 0:
        raise RankDeficiencyError(names)
    threshold = diag[0] * max(n, k) * np.finfo(float).eps if k else 0.0
    rank = int((diag > threshold).sum())
    if rank < k:
        raise RankDeficiencyError(sorted(names[p] for p in piv[rank:]))

    coef_piv = linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(k)
    beta[piv] = coef_piv
    return beta, y - X @ beta


def _cluster_meat(scores: np.ndarray, codes: np.ndarray, n_groups: int) -> np.ndarray:
    summed = np.empty((n_groups, scores.shape[1]))
    for c in range(scores.shape[1]):
        summed[:, c] = np.bincount(codes, weights=scores[:, c], minlength=n_groups)
    return summed.T @ summed


def _one_way(bread: np.ndarray, scores: np.ndarray, codes: np.ndarray, n_groups: int, n: int, k: int) -> np.ndarray:
    if n_groups < 2:
        raise InvalidInputError("Clustered covariance needs at least two clusters per dimension")
    factor = n_groups / (n_groups - 1) * (n - 1) / (n - k)
    return factor * bread @ _cluster_meat(scores, codes, n_groups) @ bread


def cluster_cov_twoway(
    X: np.ndarray,
    residuals: np.ndarray,
    clusters_a,
    clusters_b=None
) -> Tuple[np.ndarray, bool]:
    """
    Cluster-robust covariance V_A + V_B - V_AB (one-way when clusters_b is None).

    Each term carries G/(G-1) * (n-1)/(n-k). Negative eigenvalues of the
    combined matrix are truncated to 0.

    Returns:
        (covariance, whether eigenvalues were truncated)
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    u = np.asarray(residuals, dtype=float)
    n, k = X.shape
    if len(u) != n or len(clusters_a) != n or (clusters_b is not None and len(clusters_b) != n):
        raise InvalidInputError("Cluster ids and residuals must align with the design rows")
    if n <= k:
        raise InvalidInputError(f"{n} observations for {k} regressors")

    bread = linalg.inv(X.T @ X)
    bread = (bread + bread.T) / 2
    scores = X * u[:, None]

    codes_a, g_a = factor_codes(clusters_a)
    V = _one_way(bread, scores, codes_a, g_a, n, k)
    if clusters_b is None:
        return (V + V.T) / 2, False

    codes_b, g_b = factor_codes(clusters_b)
    pair = np.column_stack([codes_a, codes_b])
    _, codes_ab = np.unique(pair, axis=0, return_inverse=True)
    codes_ab = codes_ab.ravel()
    g_ab = int(codes_ab.max()) + 1
    V_b = _one_way(bread, scores, codes_b, g_b, n, k)
    V_ab = _one_way(bread, scores, codes_ab, g_ab, n, k) if g_ab > 1 else np.zeros_like(V)
    V = V + (V_b - V_ab)
    V = (V + V.T) / 2

    eigvals, eigvecs = linalg.eigh(V)
    if eigvals.min() < -1e-12 * max(1.0, np.abs(eigvals).max()):
        logger.warning(f"Two-way covariance not PSD (min eigenvalue {eigvals.min():.3e}); truncating")
        V = (eigvecs * np.clip(eigvals, 0, None)) @ eigvecs.T
        return (V + V.T) / 2, True
    return V, False


def stars_for(pvalue: float) -> str:
    for level, mark in STAR_LEVELS:
        if pvalue < level:
            return mark
    return ""


def select_sample(spec: RegressionSpec, panel: pd.DataFrame) -> pd.DataFrame:
    sample = panel
    if spec.period_group is not None:
        sample = sample[sample["period_group"] == spec.period_group]
    if spec.interval is not None:
        sample = sample[sample["interval"] == spec.interval]
    if spec.dest_type is not None:
        if "dest_type" not in sample.columns:
            raise SpecError(f"Spec '{spec.name}' needs cluster types; run the typology stage first")
        sample = sample[sample["dest_type"] == spec.dest_type]
    return sample


def fit(
    spec: RegressionSpec,
    panel: pd.DataFrame,
    log_mode: str = "log1p",
    offset_km: float = DISTANCE_OFFSET_KM
) -> FitResult:
    """
    Estimate one named specification on its sample of the panel.

    Drops singleton fixed-effect groups, standardises the outcome and the raw
    regressors on the remaining rows, absorbs the fixed effects, solves OLS
    and clusters the covariance by spec.cluster_by.
    """
    unknown = [r for r in spec.regressors if r not in REGRESSORS]
    if unknown:
        raise SpecError(f"Unknown regressor(s) {unknown} in spec '{spec.name}'; known: {sorted(REGRESSORS)}")

    sample = select_sample(spec, panel)
    if sample.empty:
        raise InvalidInputError(f"Sample for spec '{spec.name}' is empty")

    sample = sample.reset_index(drop=True)
    # a factor with one level in the sample is the constant
    factors_used = [f for f in FACTOR_ORDER if f in spec.fixed_effects and sample[f].nunique() > 1]
    codes = [factor_codes(sample[f].to_numpy())[0] for f in factors_used]
    keep = singleton_mask(codes) if codes else np.ones(len(sample), dtype=bool)
    n_dropped = int((~keep).sum())
    if n_dropped:
        logger.warning(f"Spec {spec.name}: dropped {n_dropped} singleton observations")
        sample = sample[keep].reset_index(drop=True)
        codes = [factor_codes(sample[f].to_numpy())[0] for f in factors_used]
    if sample.empty:
        raise InvalidInputError(f"Sample for spec '{spec.name}' is empty after dropping singletons")

    # moments come from the estimation rows only
    raw = ["log_count"] + sorted({c for r in spec.regressors for c in REGRESSORS[r][0]})
    sample, moments = standardize(sample, raw, sample=spec.name)

    y = sample["y"].to_numpy(dtype=float)
    X = np.column_stack([REGRESSORS[r][1](sample).to_numpy(dtype=float) for r in spec.regressors])
    demeaned, iterations = within_transform(np.column_stack([y, X]), codes, spec.tol, spec.max_iter)
    y_dm, X_dm = demeaned[:, 0], demeaned[:, 1:]

    beta, resid = ols(y_dm, X_dm, spec.regressors)
    dims = [sample[c].to_numpy() for c in spec.cluster_by]
    cov, repaired = cluster_cov_twoway(X_dm, resid, dims[0], dims[1] if len(dims) > 1 else None)

    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, beta / se, np.inf * np.sign(beta))
    pvalues = 2 * norm.sf(np.abs(z))

    ssr = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum())
    within_tss = float(y_dm @ y_dm)
    names = list(spec.regressors)
    result = FitResult(
        spec=spec,
        names=names,
        coefficients=dict(zip(names, beta.tolist())),
        se=dict(zip(names, se.tolist())),
        pvalues=dict(zip(names, pvalues.tolist())),
        stars={name: stars_for(p) for name, p in zip(names, pvalues)},
        covariance=cov.tolist(),
        n_obs=len(sample),
        n_dropped_singletons=n_dropped,
        r2=1 - ssr / tss if tss > 0 else 0.0,
        within_r2=1 - ssr / within_tss if within_tss > 0 else 0.0,
        iterations=iterations,
        psd_repaired=repaired,
        fixed_effect_levels={f: int(c.max()) + 1 for f, c in zip(factors_used, codes)},
        n_clusters={c: int(len(np.unique(d))) for c, d in zip(spec.cluster_by, dims)},
        standardization=moments,
        log_mode=log_mode,
        distance_offset_km=offset_km
    )
    logger.info(
        f"Fitted {spec.name}: n={result.n_obs}, within R2={result.within_r2:.4f}, {iterations} demeaning sweeps"
    )
    return result


def marginal_effects(result: FitResult, grid_km: Sequence[float] = (0.0, 1.0, 2.0, 5.0, 10.0, 20.0)) -> MarginalCurve:
    """
    Effect of relatedness density at each distance: b_omega + b_int * x, x the
    standardised log distance of the grid point in the fit's own sample.
    """
    missing = [n for n in ("omega", "omega_x_log_dist") if n not in result.coefficients]
    if missing:
        raise SpecError(f"Spec '{result.spec.name}' has no coefficient(s) {missing} for a marginal curve")
    moments = result.standardization.moments.get("log_dist")
    if moments is None:
        raise SpecError(f"Spec '{result.spec.name}' did not standardise log distance")

    grid = np.asarray(list(grid_km), dtype=float)
    if (grid < 0).any():
        raise InvalidInputError("Distance grid must be >= 0")
    x = (log_distance(grid, result.distance_offset_km) - moments.mean) / moments.sd

    b1 = result.coefficients["omega"]
    b3 = result.coefficients["omega_x_log_dist"]
    v11 = result.cov("omega", "omega")
    v33 = result.cov("omega_x_log_dist", "omega_x_log_dist")
    v13 = result.cov("omega", "omega_x_log_dist")
    effect = b1 + b3 * x
    se = np.sqrt(np.clip(v11 + x ** 2 * v33 + 2 * x * v13, 0, None))
    z = norm.ppf(0.975)
    return MarginalCurve(
        spec_name=result.spec.name,
        distance_km=grid.tolist(),
        log_dist_std=x.tolist(),
        effect=effect.tolist(),
        se=se.tolist(),
        lower=(effect - z * se).tolist(),
        upper=(effect + z * se).tolist()
    )
