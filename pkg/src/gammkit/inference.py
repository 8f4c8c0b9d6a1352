"""Fit summaries, partial-effect curves and surfaces, and model comparison.

The summary mirrors the usual two-panel layout: parametric coefficients with
t statistics, then one row per smooth term with effective degrees of freedom,
reference df (the term's column count), and an approximate Wald F test based
on a rank-truncated pseudoinverse of the term's posterior covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import formula
from .engine import FittedGamm
from .errors import DataError

_WALD_EIG_TOL = 1e-10


@dataclass
class SummaryTable:
    parametric_rows: list[tuple[str, float, float, float, float]]
    smooth_rows: list[tuple[str, float, float, float, float]]
    adjusted_r2: float
    reml_score: float
    aic: float
    n: int
    rho: float

    def text(self) -> str:
        width = max(
            [len("A. parametric coefficients"), len("B. smooth terms")]
            + [len(r[0]) + 2 for r in self.parametric_rows + self.smooth_rows]
        )
        lines = []
        head = f"{'A. parametric coefficients':<{width}}"
        lines.append(head + f"{'Estimate':>12}{'Std. Error':>12}{'t-value':>12}{'p-value':>12}")
        for name, est, se, t, p in self.parametric_rows:
            lines.append(
                f"{'  ' + name:<{width}}{est:>12.4f}{se:>12.4f}{t:>12.4f}{_fmt_p(p):>12}"
            )
        lines.append(f"{'B. smooth terms':<{width}}" + f"{'edf':>12}{'Ref.df':>12}{'F-value':>12}{'p-value':>12}")
        for name, edf, ref, fval, p in self.smooth_rows:
            lines.append(
                f"{'  ' + name:<{width}}{edf:>12.4f}{ref:>12.4f}{fval:>12.4f}{_fmt_p(p):>12}"
            )
        lines.append("-" * (width + 48))
        lines.append(
            f"adjusted R-sq = {self.adjusted_r2:.4f}   REML = {self.reml_score:.4f}   "
            f"AIC = {self.aic:.4f}   n = {self.n}   rho = {self.rho:g}"
        )
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "parametric": [
                {"name": n, "estimate": e, "std_error": s, "t_value": t, "p_value": p}
                for n, e, s, t, p in self.parametric_rows
            ],
            "smooth": [
                {"label": n, "edf": e, "ref_df": r, "f_value": f, "p_value": p}
                for n, e, r, f, p in self.smooth_rows
            ],
            "adjusted_r2": self.adjusted_r2,
            "reml": self.reml_score,
            "aic": self.aic,
            "n": self.n,
            "rho": self.rho,
        }


def _fmt_p(p: float) -> str:
    return "< 0.0001" if p < 1e-4 else f"{p:.4f}"


@dataclass
class CurveEstimate:
    grid: np.ndarray
    fit: np.ndarray
    se: np.ndarray
    label: str
    by_level: str | None = None
    level: str | None = None
    zero_containment: float | None = None
    is_reference: bool = False

    def bands(self, z: float = 1.96) -> tuple[np.ndarray, np.ndarray]:
        return self.fit - z * self.se, self.fit + z * self.se


@dataclass
class SurfaceEstimate:
    grid_x: np.ndarray
    grid_z: np.ndarray
    fit: np.ndarray  # (len(grid_x), len(grid_z))
    se: np.ndarray
    label: str

    def to_long(self) -> list[tuple[float, float, float, float]]:
        rows = []
        for i, xv in enumerate(self.grid_x):
            for j, zv in enumerate(self.grid_z):
                rows.append((float(xv), float(zv), float(self.fit[i, j]), float(self.se[i, j])))
        return rows


def adjusted_r2(model: FittedGamm) -> float:
    rss = float(model.residuals_raw @ model.residuals_raw)
    total_var = float(np.var(model.y, ddof=1))
    return 1.0 - (rss / (model.n - model.edf_total)) / total_var


def aic(model: FittedGamm) -> float:
    rss_w = float(model.residuals_whitened @ model.residuals_whitened)
    return model.n * math.log(2.0 * math.pi * model.sigma2) + rss_w / model.sigma2 + 2.0 * model.edf_total


def summarize(model: FittedGamm) -> SummaryTable:
    """Two-panel summary: parametric t tests, then smooth-term Wald F tests."""
    df_resid = model.n - model.edf_total
    a, z = model.design.parametric_span
    parametric_rows = []
    for i, name in zip(range(a, z), model.design.parametric_names):
        est = float(model.beta[i])
        se = math.sqrt(max(model.v_beta[i, i], 0.0))
        t = est / se if se > 0 else math.inf
        p = 2.0 * float(stats.t.sf(abs(t), df_resid))
        parametric_rows.append((name, est, se, t, p))

    smooth_rows = []
    for block in model.design.blocks:
        ba, bz = block.span
        beta_t = model.beta[ba:bz]
        v_t = model.v_beta[ba:bz, ba:bz]
        edf = model.edf_per_term[block.label]
        width = bz - ba
        rank = max(1, min(int(math.ceil(edf)), width))
        w, V = np.linalg.eigh(v_t)
        order = np.argsort(w)[::-1]
        w, V = w[order], V[:, order]
        usable = w > max(w[0], 0.0) * _WALD_EIG_TOL
        rank = min(rank, int(usable.sum())) or 1
        proj = V[:, :rank].T @ beta_t
        stat = float(np.sum(proj * proj / w[:rank])) / rank
        p = float(stats.f.sf(stat, rank, df_resid))
        smooth_rows.append((block.label, edf, float(width), stat, p))

    return SummaryTable(
        parametric_rows=parametric_rows,
        smooth_rows=smooth_rows,
        adjusted_r2=adjusted_r2(model),
        reml_score=model.reml_score,
        aic=aic(model),
        n=model.n,
        rho=model.rho,
    )


def _check_grid(block, grid: np.ndarray, cov: str, allow_extrapolation: bool):
    lo, hi = block.cov_ranges[cov]
    if not allow_extrapolation and (grid.min() < lo or grid.max() > hi):
        raise DataError(
            f"grid for {cov!r} leaves the observed range [{lo:g}, {hi:g}]; "
            "pass allow_extrapolation=True to override"
        )


def _curve_from_columns(model: FittedGamm, X0: np.ndarray, span: tuple[int, int]):
    a, z = span
    fit = X0 @ model.beta[a:z]
    v = model.v_beta[a:z, a:z]
    se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X0, v, X0), 0.0))
    return fit, se


def evaluate_smooth(
    model: FittedGamm,
    term_label: str,
    grid,
    level: str | None = None,
    allow_extrapolation: bool = False,
) -> CurveEstimate:
    """Partial-effect curve with pointwise standard errors.

    Factor smooths require `level`; tensor terms go through
    :func:`evaluate_surface` instead.
    """
    block = model.design.block(term_label)
    grid = np.asarray(grid, dtype=float)
    if block.kind == formula.RANDOM_EFFECT:
        raise DataError(f"{term_label!r} is a random effect; use random_effect_coefs")
    if block.kind == formula.TENSOR:
        raise DataError(f"{term_label!r} is a tensor smooth; use evaluate_surface")
    _check_grid(block, grid, block.covariates[0], allow_extrapolation)

    if block.kind == formula.FACTOR_SMOOTH:
        if level is None:
            raise DataError(f"factor smooth {term_label!r} needs a level")
        ev = block.evaluator
        if level not in ev.levels:
            raise DataError(f"{term_label!r}: unknown level {level!r}")
        M, offset = ev.level_design(grid, ev.levels.index(level))
        a = block.span[0] + offset
        fit, se = _curve_from_columns(model, M, (a, a + M.shape[1]))
        return CurveEstimate(grid, fit, se, term_label, level=level)

    if level is not None:
        raise DataError(f"{term_label!r} is not a factor smooth; level does not apply")
    X0 = block.evaluator.design(grid)
    if block.constraint is not None:
        X0 = X0 @ block.constraint
    fit, se = _curve_from_columns(model, X0, block.span)
    return CurveEstimate(grid, fit, se, term_label, by_level=block.by_level)


def evaluate_difference(model: FittedGamm, by_term_label: str, level: str, grid) -> CurveEstimate:
    """Full treatment-contrast curve for one non-reference by-level.

    Combines the level's difference-smooth block with its parametric dummy
    (the block is sum-to-zero constrained, so the constant part of the
    contrast lives in the dummy), with standard errors from their joint
    posterior covariance.  The reference level's difference is identically
    zero by construction and is returned as exact zeros, flagged.
    """
    grid = np.asarray(grid, dtype=float)
    blocks = [
        b
        for b in model.design.blocks
        if b.term_label == by_term_label and b.by_mode == "difference"
    ]
    if not blocks:
        raise DataError(f"{by_term_label!r} has no difference smooths")
    by_var = blocks[0].by_var
    levels = model.bound.levels_of(by_var)
    if level == levels[0]:
        zeros = np.zeros_like(grid)
        return CurveEstimate(
            grid, zeros, zeros.copy(), f"{by_term_label}:{by_var}={level}",
            by_level=level, zero_containment=1.0, is_reference=True,
        )
    block = next((b for b in blocks if b.by_level == level), None)
    if block is None:
        raise DataError(f"{by_term_label!r}: unknown level {level!r}")
    _check_grid(block, grid, block.covariates[0], allow_extrapolation=False)
    X0 = block.evaluator.design(grid)
    if block.constraint is not None:
        X0 = X0 @ block.constraint
    a, z = block.span
    fit = X0 @ model.beta[a:z]
    var = np.einsum("ij,jk,ik->i", X0, model.v_beta[a:z, a:z], X0)
    dummy = f"{by_var}={level}"
    if dummy in model.design.parametric_names:
        j = model.design.parametric_span[0] + model.design.parametric_names.index(dummy)
        fit = fit + model.beta[j]
        var = var + 2.0 * (X0 @ model.v_beta[a:z, j]) + model.v_beta[j, j]
    curve = CurveEstimate(grid, fit, np.sqrt(np.maximum(var, 0.0)), block.label, by_level=level)
    lo, hi = curve.bands()
    curve.zero_containment = float(np.mean((lo <= 0.0) & (0.0 <= hi)))
    return curve


def evaluate_surface(
    model: FittedGamm,
    tensor_label: str,
    grid_x,
    grid_z,
    allow_extrapolation: bool = False,
) -> SurfaceEstimate:
    """Tensor smooth evaluated on the outer product of two grids."""
    block = model.design.block(tensor_label)
    if block.kind != formula.TENSOR:
        raise DataError(f"{tensor_label!r} is not a tensor smooth")
    if len(block.covariates) != 2:
        raise DataError(f"{tensor_label!r} has {len(block.covariates)} covariates; grids support 2")
    gx = np.asarray(grid_x, dtype=float)
    gz = np.asarray(grid_z, dtype=float)
    _check_grid(block, gx, block.covariates[0], allow_extrapolation)
    _check_grid(block, gz, block.covariates[1], allow_extrapolation)
    xs = np.repeat(gx, len(gz))
    zs = np.tile(gz, len(gx))
    X0 = block.evaluator.design({block.covariates[0]: xs, block.covariates[1]: zs})
    if block.constraint is not None:
        X0 = X0 @ block.constraint
    fit, se = _curve_from_columns(model, X0, block.span)
    shape = (len(gx), len(gz))
    return SurfaceEstimate(gx, gz, fit.reshape(shape), se.reshape(shape), tensor_label)


@dataclass
class RandomEffectTable:
    label: str
    factors: tuple[str, ...]
    keys: list[tuple[str, ...]]
    coefs: np.ndarray
    sds: np.ndarray

    def rows(self):
        for key, c, s in zip(self.keys, self.coefs, self.sds):
            yield key, float(c), float(s)


def random_effect_coefs(model: FittedGamm, re_label: str) -> RandomEffectTable:
    """Estimated random-effect coefficients keyed by factor level (pairs)."""
    block = model.design.block(re_label)
    if block.kind != formula.RANDOM_EFFECT:
        raise DataError(f"{re_label!r} is not a random-effect term")
    a, z = block.span
    keys = [tuple(name.split(":")) for name in block.coef_names]
    sds = np.sqrt(np.maximum(np.diag(model.v_beta[a:z, a:z]), 0.0))
    return RandomEffectTable(re_label, block.covariates, keys, model.beta[a:z].copy(), sds)


def coef_correlation(table: RandomEffectTable, split_factor: str):
    """Pearson correlation between the two coefficient vectors of a 2-level split.

    Returns (r, t_stat, df, p_value) with df = pairs - 2.
    """
    if split_factor not in table.factors or len(table.factors) != 2:
        raise DataError(f"{split_factor!r} is not a 2-factor key of {table.label!r}")
    split_pos = table.factors.index(split_factor)
    other_pos = 1 - split_pos
    groups: dict[str, dict[str, float]] = {}
    for key, coef, _ in table.rows():
        groups.setdefault(key[other_pos], {})[key[split_pos]] = coef
    split_levels = sorted({key[split_pos] for key in table.keys})
    if len(split_levels) != 2:
        raise DataError(f"{split_factor!r} must have exactly 2 levels, got {len(split_levels)}")
    pairs = [
        (g[split_levels[0]], g[split_levels[1]])
        for g in groups.values()
        if len(g) == 2
    ]
    if len(pairs) < 3:
        raise DataError(f"need at least 3 complete pairs, got {len(pairs)}")
    xs = np.array([p[0] for p in pairs])
    ys = np.array([p[1] for p in pairs])
    r = float(np.corrcoef(xs, ys)[0, 1])
    df = len(pairs) - 2
    if 1.0 - r * r <= 0.0:
        t = math.copysign(math.inf, r)
        p = 0.0
    else:
        t = r * math.sqrt(df) / math.sqrt(1.0 - r * r)
        p = 2.0 * float(stats.t.sf(abs(t), df))
    return r, t, df, p


@dataclass
class ComparisonRow:
    model_id: str
    reml: float
    aic: float
    adjusted_r2: float
    edf_total: float
    comparable: bool
    delta_reml: float = 0.0
    delta_aic: float = 0.0
    delta_adjusted_r2: float = 0.0


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow] = field(default_factory=list)

    def text(self) -> str:
        lines = [
            f"{'model':<20}{'REML':>12}{'AIC':>14}{'adj-R2':>10}{'edf':>10}"
            f"{'dREML':>12}{'dAIC':>14}{'comparable':>12}"
        ]
        for r in self.rows:
            lines.append(
                f"{r.model_id:<20}{r.reml:>12.3f}{r.aic:>14.3f}{r.adjusted_r2:>10.4f}"
                f"{r.edf_total:>10.2f}{r.delta_reml:>12.3f}{r.delta_aic:>14.3f}"
                f"{str(r.comparable):>12}"
            )
        return "\n".join(lines) + "\n"


def compare(models: list[FittedGamm], ids: list[str] | None = None) -> ComparisonTable:
    """Score table with deltas against the first model.

    Models fitted to different responses or with a different rho are still
    listed but marked not comparable; differing row counts are an error.
    """
    if not models:
        raise DataError("nothing to compare")
    ids = ids or [f"model{i + 1}" for i in range(len(models))]
    first = models[0]
    table = ComparisonTable()
    for mid, m in zip(ids, models):
        if m.n != first.n:
            raise DataError(f"{mid}: {m.n} rows, expected {first.n}")
        comparable = bool(np.array_equal(m.y, first.y) and m.rho == first.rho)
        table.rows.append(
            ComparisonRow(
                model_id=mid,
                reml=m.reml_score,
                aic=aic(m),
                adjusted_r2=adjusted_r2(m),
                edf_total=m.edf_total,
                comparable=comparable,
                delta_reml=m.reml_score - first.reml_score,
                delta_aic=aic(m) - aic(first),
                delta_adjusted_r2=adjusted_r2(m) - adjusted_r2(first),
            )
        )
    return table
