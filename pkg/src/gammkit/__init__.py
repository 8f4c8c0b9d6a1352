"""Gaussian additive mixed models with AR(1) residual whitening.

Typical use:

    import gammkit

    data = gammkit.load_csv("trials.csv")
    model = gammkit.gamm(
        "RT ~ Condition + s(Frequency) + s(Trial, Subject, bs=\"fs\", m=1)",
        data, rho=0.3, ar_start_column="NewTimeSeries",
    )
    print(gammkit.summarize(model).text())
"""

from .dataio import Column, Dataset, SeriesIndex, build_series_index, load_csv, write_csv
from .diagnostics import (
    AcfResult,
    RhoReport,
    acf,
    acf_by_series,
    persistent_event_filter,
    rho_sweep,
    suggest_rho,
)
from .engine import FittedGamm, WhitenedSystem, fit, fit_pls, optimize_lambdas, reml_score, whiten
from .errors import DataError, FitError, FormulaError, GammkitError
from .formula import BoundSpec, ModelSpec, SmoothTerm, parse_formula, pretty_print, validate_against
from .inference import (
    CurveEstimate,
    SummaryTable,
    coef_correlation,
    compare,
    evaluate_difference,
    evaluate_smooth,
    evaluate_surface,
    random_effect_coefs,
    summarize,
)

__version__ = "0.1.0"


def gamm(formula_text: str, data, rho: float = 0.0, ar_start_column: str | None = None) -> FittedGamm:
    """Parse, validate, and fit in one call."""
    spec = parse_formula(formula_text).with_options(rho=rho, ar_start_column=ar_start_column)
    return fit(validate_against(spec, data), data)


__all__ = [
    "AcfResult",
    "BoundSpec",
    "Column",
    "CurveEstimate",
    "DataError",
    "Dataset",
    "FitError",
    "FittedGamm",
    "FormulaError",
    "GammkitError",
    "ModelSpec",
    "RhoReport",
    "SeriesIndex",
    "SmoothTerm",
    "SummaryTable",
    "WhitenedSystem",
    "acf",
    "acf_by_series",
    "build_series_index",
    "coef_correlation",
    "compare",
    "evaluate_difference",
    "evaluate_smooth",
    "evaluate_surface",
    "fit",
    "fit_pls",
    "gamm",
    "load_csv",
    "optimize_lambdas",
    "parse_formula",
    "persistent_event_filter",
    "pretty_print",
    "random_effect_coefs",
    "reml_score",
    "rho_sweep",
    "suggest_rho",
    "summarize",
    "validate_against",
    "whiten",
    "write_csv",
]
