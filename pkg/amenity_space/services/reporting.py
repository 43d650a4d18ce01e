"""
Plain-text regression tables.

Columns are fits, rows are coefficients with stars and standard errors in
parentheses, then fixed-effect check rows and fit statistics.
"""
from typing import List, Optional, Sequence
from amenity_space.schemas import FitResult, MarginalCurve
from amenity_space.services.fe_regression import FACTOR_ORDER
import pandas as pd

VARIABLE_LABELS = {
    "omega": "omega_ipt",
    "log_dist": "log(distance)_ij",
    "omega_x_log_dist": "omega_ipt x log(distance)_ij",
    "omega_x_covid": "omega_ipt x Covid",
    "omega_x_recovery": "omega_ipt x Recovery",
    "covid": "Covid",
    "recovery": "Recovery",
}

FACTOR_LABELS = {
    "dest_cluster": "Destination",
    "res_cluster": "Residence",
    "amenity": "Amenity",
    "year": "Year",
}

_EMPTY = "-"


def _fmt(value: float, digits: int = 4) -> str:
    return f"{value:.{digits}f}"


def format_table(
    fits: Sequence[Optional[FitResult]],
    titles: Sequence[str],
    heading: str = "",
    digits: int = 4
) -> str:
    """
    Render fits side by side. A None entry prints as an all-dash column
    (spec skipped for an empty or degenerate sample).
    """
    names: List[str] = []
    for result in fits:
        for name in (result.names if result else []):
            if name not in names:
                names.append(name)

    rows = [
        ["Dependent Variable:"] + ["log(Y)"] * len(fits),
        ["Model:"] + [f"({c + 1})" for c in range(len(fits))],
        [""] + list(titles),
        ["Variables"] + [""] * len(fits),
    ]
    for name in names:
        estimates, errors = [VARIABLE_LABELS.get(name, name)], [""]
        for result in fits:
            if result and name in result.coefficients:
                estimates.append(_fmt(result.coefficients[name], digits) + result.stars[name])
                errors.append(f"({_fmt(result.se[name], digits)})")
            else:
                estimates.append("")
                errors.append("")
        rows.extend([estimates, errors])

    rows.append(["Fixed-effects"] + [""] * len(fits))
    for factor in FACTOR_ORDER:
        row = [FACTOR_LABELS[factor]]
        for result in fits:
            row.append(_EMPTY if result is None else ("Yes" if factor in result.fixed_effect_levels else "No"))
        rows.append(row)

    rows.append(["Fit statistics"] + [""] * len(fits))
    rows.append(["Observations"] + [_EMPTY if r is None else f"{r.n_obs:,}" for r in fits])
    rows.append(["R2"] + [_EMPTY if r is None else _fmt(r.r2, 5) for r in fits])
    rows.append(["Within R2"] + [_EMPTY if r is None else _fmt(r.within_r2, 5) for r in fits])

    widths = [max(len(row[c]) for row in rows) for c in range(len(rows[0]))]
    lines = []
    if heading:
        lines.append(heading)
    for row in rows:
        cells = [row[0].ljust(widths[0])] + [cell.rjust(widths[c]) for c, cell in enumerate(row) if c > 0]
        lines.append("  ".join(cells).rstrip())
    rule = "_" * len(max(lines, key=len))
    lines.insert(1 if heading else 0, rule)
    lines.append(rule)

    first = next((r for r in fits if r is not None), None)
    cluster_dims = first.spec.cluster_by if first else ["dest_cluster", "res_cluster"]
    lines.append(
        "Clustered (" + " & ".join(FACTOR_LABELS.get(c, c) for c in cluster_dims) + ") standard-errors in parentheses"
    )
    lines.append("Signif. Codes: ***: 0.01, **: 0.05, *: 0.1")
    if first:
        outcome = "log(1+count)" if first.log_mode == "log1p" else "log(count)"
        lines.append(f"Outcome: standardised {outcome}; log distance offset {first.distance_offset_km} km")
    return "\n".join(lines) + "\n"


def curve_frame(curve: MarginalCurve) -> pd.DataFrame:
    return pd.DataFrame({
        "distance_km": curve.distance_km,
        "log_dist_std": curve.log_dist_std,
        "effect": curve.effect,
        "se": curve.se,
        "lower": curve.lower,
        "upper": curve.upper,
    })


def coefficient_frame(result: FitResult) -> pd.DataFrame:
    return pd.DataFrame({
        "spec": result.spec.name,
        "variable": result.names,
        "coefficient": [result.coefficients[n] for n in result.names],
        "se": [result.se[n] for n in result.names],
        "pvalue": [result.pvalues[n] for n in result.names],
        "stars": [result.stars[n] for n in result.names],
    })
