"""Residual autocorrelation diagnostics and AR(1) coefficient guidance.

ACFs use the standard sample estimator (single mean, biased denominator),
demeaned per series; significance is judged against the white-noise band
+-1.96/sqrt(n).  Model checking looks at whitened residuals (the quantity the
AR(1) model claims is white); the raw-residual lag-1 ACF drives the initial
rho guess.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import dataio, engine, formula
from .errors import DataError, FitError

Z_95 = 1.96


@dataclass
class AcfResult:
    series: str
    acf: np.ndarray
    n: int
    ci_bound: float
    significant: np.ndarray

    @property
    def max_lag(self) -> int:
        return len(self.acf) - 1

    def n_significant(self) -> int:
        return int(self.significant[1:].sum())


def acf(x, max_lag: int, series: str = "0") -> AcfResult:
    """Sample autocorrelations at lags 0..max_lag."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2:
        raise DataError(f"need at least 2 observations, got {n}")
    if max_lag >= n:
        raise DataError(f"max lag {max_lag} must be below the series length {n}")
    if max_lag < 0:
        raise DataError("max lag must be nonnegative")
    d = x - x.mean()
    denom = float(d @ d)
    if denom == 0.0:
        raise DataError("zero-variance series has no autocorrelation function")
    r = np.empty(max_lag + 1)
    for lag in range(max_lag + 1):
        r[lag] = float(d[: n - lag] @ d[lag:]) / denom
    ci = Z_95 / math.sqrt(n)
    significant = np.abs(r) > ci
    significant[0] = False
    return AcfResult(series, r, n, ci, significant)


@dataclass
class AcfBySeries:
    per_series: list[AcfResult]
    pooled: AcfResult
    skipped: list[int]


def acf_by_series(residuals, series_index: dataio.SeriesIndex, max_lag: int) -> AcfBySeries:
    """Per-series ACFs plus a pooled ACF (lag products summed across series).

    Series no longer than max_lag are skipped with a notice.
    """
    residuals = np.asarray(residuals, dtype=float)
    per_series: list[AcfResult] = []
    skipped: list[int] = []
    num = np.zeros(max_lag + 1)
    den = 0.0
    pooled_n = 0
    for sid in range(series_index.n_series):
        rows = series_index.rows_of(sid)
        if len(rows) <= max_lag:
            skipped.append(sid)
            continue
        x = residuals[rows]
        per_series.append(acf(x, max_lag, series=str(sid)))
        d = x - x.mean()
        den += float(d @ d)
        pooled_n += len(x)
        for lag in range(max_lag + 1):
            num[lag] += float(d[: len(x) - lag] @ d[lag:])
    if not per_series:
        raise DataError(f"every series is shorter than {max_lag + 1} observations")
    if skipped:
        warnings.warn(f"skipped {len(skipped)} series shorter than {max_lag + 1} rows", stacklevel=2)
    if den == 0.0:
        raise DataError("zero-variance residuals have no autocorrelation function")
    r = num / den
    ci = Z_95 / math.sqrt(pooled_n)
    significant = np.abs(r) > ci
    significant[0] = False
    pooled = AcfResult("pooled", r, pooled_n, ci, significant)
    return AcfBySeries(per_series, pooled, skipped)


def suggest_rho(residuals, series_index: dataio.SeriesIndex) -> float:
    """Initial AR(1) guess: pooled lag-1 ACF of the raw residuals, in [0, 0.99]."""
    pooled = acf_by_series(residuals, series_index, 1).pooled
    lag1 = float(pooled.acf[1])
    if lag1 < 0.0:
        warnings.warn(f"pooled lag-1 autocorrelation is negative ({lag1:.3f}); suggesting 0", stacklevel=2)
        return 0.0
    return min(lag1, 0.99)


@dataclass
class RhoCandidate:
    rho: float
    pooled_lag1: float | None
    persistent_count: int | None  # series with any significant lag 1..L
    artifact_count: int | None    # series with significant negative lag-1
    error: str | None = None


@dataclass
class RhoReport:
    candidates: list[RhoCandidate]
    recommended: float | None
    n_series: int
    max_lag: int

    def to_dict(self) -> dict:
        return {
            "candidates": [dataclasses.asdict(c) for c in self.candidates],
            "recommended": self.recommended,
            "n_series": self.n_series,
            "max_lag": self.max_lag,
        }


def rho_sweep(
    bound: formula.BoundSpec,
    data: dataio.Dataset,
    candidates,
    max_lag: int = 10,
) -> RhoReport:
    """Refit per candidate rho and count leftover versus artifact autocorrelation.

    Recommends the smallest candidate minimizing persistent + artifact series
    counts: whiten enough, but no further.
    """
    cands = sorted(float(c) for c in candidates)
    if not cands:
        raise DataError("no rho candidates given")
    if any(not 0.0 <= c < 1.0 for c in cands):
        raise DataError("rho candidates must lie in [0, 1)")
    rows: list[RhoCandidate] = []
    best: tuple[int, float] | None = None
    n_series = 0
    for cand in cands:
        spec = bound.spec.with_options(rho=cand, ar_start_column=bound.spec.ar_start_column)
        try:
            model = engine.fit(dataclasses.replace(bound, spec=spec), data)
            result = acf_by_series(model.residuals_whitened, model.series, max_lag)
        except (FitError, DataError) as exc:
            rows.append(RhoCandidate(cand, None, None, None, error=str(exc)))
            continue
        n_series = max(n_series, len(result.per_series))
        persistent = sum(1 for r in result.per_series if r.n_significant() > 0)
        artifacts = sum(
            1 for r in result.per_series if r.significant[1] and r.acf[1] < 0.0
        )
        rows.append(RhoCandidate(cand, float(result.pooled.acf[1]), persistent, artifacts))
        badness = persistent + artifacts
        if best is None or badness < best[0]:
            best = (badness, cand)
    recommended = best[1] if best is not None else None
    return RhoReport(rows, recommended, n_series, max_lag)


def persistent_event_filter(per_series: list[AcfResult], series_index: dataio.SeriesIndex) -> np.ndarray:
    """Row mask excluding series with >= ceil(0.2 * L) significant lags."""
    mask = np.ones(len(series_index.series_id), dtype=bool)
    for result in per_series:
        threshold = math.ceil(0.2 * result.max_lag)
        if threshold and result.n_significant() >= threshold:
            mask[series_index.rows_of(int(result.series))] = False
    return mask
