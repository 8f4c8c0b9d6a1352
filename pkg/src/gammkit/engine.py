"""Whitening, penalized least squares, and REML smoothing-parameter search.

The model is Gaussian with identity link.  AR(1) errors of coefficient rho
are removed by a row transform: the first row of each series is kept raw and
every later row t becomes (row_t - rho * row_{t-1}) / sqrt(1 - rho^2), which
maps correlated errors to uncorrelated ones with a common variance.

Smoothing parameters minimize the restricted marginal likelihood score

    (1/2) [ (n - M_p) (log(2 pi s2) + 1) + log det(X'X + S) - log det+(S) ]

with s2 = D / (n - M_p), D the penalized deviance, M_p the total penalty
null-space dimension, and det+ the product of positive eigenvalues.  Lower
is better.  Coefficients are solved through pivoted orthogonal
decompositions of the penalty-augmented design, not by inverting normal
equations; the optimizer's inner loop uses an equivalent factorization of
cached cross-products for speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from . import basis, dataio, formula
from .errors import DataError, FitError

LOG_LAMBDA_BOUNDS = (-25.0, 30.0)
MULTISTART = (1e-2, 1.0, 1e2)
_RANK_TOL = 1e-10


@dataclass
class WhitenedSystem:
    """Design and response after the AR(1) row transform."""

    x: np.ndarray
    y: np.ndarray
    rho: float


def whiten(X, y, series_index: dataio.SeriesIndex, rho: float) -> WhitenedSystem:
    """Apply the AR(1) whitening transform to X and y jointly.

    Rows at series starts are copied unchanged, so rho=0 is an exact
    identity.
    """
    if not 0.0 <= rho < 1.0:
        raise DataError(f"rho must lie in [0, 1), got {rho}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] != len(y) or len(y) != len(series_index.start_flags):
        raise DataError("X, y, and series index disagree on the number of rows")
    Xw, yw = X.copy(), y.copy()
    if rho == 0.0:
        return WhitenedSystem(Xw, yw, 0.0)
    scale = 1.0 / math.sqrt(1.0 - rho * rho)
    rows = np.flatnonzero(~series_index.start_flags)
    Xw[rows] = (X[rows] - rho * X[rows - 1]) * scale
    yw[rows] = (y[rows] - rho * y[rows - 1]) * scale
    return WhitenedSystem(Xw, yw, rho)


def _penalty_root(S: np.ndarray) -> np.ndarray:
    """Rows B with B'B = S, via eigendecomposition (positive part only)."""
    w, V = np.linalg.eigh((S + S.T) / 2.0)
    top = w[-1] if w.size else 0.0
    keep = w > max(top, 0.0) * 1e-12
    return np.sqrt(w[keep])[:, None] * V[:, keep].T


def _check_lambdas(design: basis.DesignBlocks, lambdas) -> np.ndarray:
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
    if lambdas.shape != (design.n_lambda_slots,):
        raise DataError(
            f"expected {design.n_lambda_slots} smoothing parameters, got {lambdas.shape[0]}"
        )
    if np.any(lambdas < 0.0):
        raise DataError("smoothing parameters must be nonnegative")
    return lambdas


def _augmented(system: WhitenedSystem, design: basis.DesignBlocks, lambdas: np.ndarray):
    p = design.n_columns
    rows = [system.x]
    for b in design.blocks:
        a, _ = b.span
        for S, slot in zip(b.penalties, b.slot_ids):
            lam = lambdas[slot]
            if lam == 0.0:
                continue
            root = _penalty_root(S)
            if root.shape[0] == 0:
                continue
            full = np.zeros((root.shape[0], p))
            full[:, a : a + root.shape[1]] = math.sqrt(lam) * root
            rows.append(full)
    M = np.vstack(rows)
    rhs = np.concatenate([system.y, np.zeros(M.shape[0] - len(system.y))])
    return M, rhs


def _qr_solve(M: np.ndarray, rhs: np.ndarray, design: basis.DesignBlocks):
    Q, R, perm = sla.qr(M, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        raise FitError("design matrix is identically zero")
    bad = np.flatnonzero(diag < _RANK_TOL * diag[0])
    if bad.size:
        col = int(perm[bad[0]])
        label = "parametric"
        for b in design.blocks:
            if b.span[0] <= col < b.span[1]:
                label = b.label
        raise FitError(f"rank deficiency: unidentifiable direction in term {label!r}")
    coef = sla.solve_triangular(R, Q.T @ rhs)
    beta = np.empty_like(coef)
    beta[perm] = coef
    logdet = 2.0 * float(np.sum(np.log(diag)))
    return beta, logdet


def fit_pls(system: WhitenedSystem, design: basis.DesignBlocks, lambdas):
    """Solve the penalized least-squares problem at fixed lambdas.

    Returns (beta, deviance) where deviance = RSS + penalty quadratic form,
    both on the whitened scale.
    """
    lambdas = _check_lambdas(design, lambdas)
    M, rhs = _augmented(system, design, lambdas)
    beta, _ = _qr_solve(M, rhs, design)
    resid = rhs - M @ beta
    return beta, float(resid @ resid)


def logdet_penalty(design: basis.DesignBlocks, lambdas) -> float:
    """log det+ of the summed penalty: positive eigenvalues, block by block."""
    lambdas = _check_lambdas(design, lambdas)
    total = 0.0
    for b in design.blocks:
        Sb = np.zeros_like(b.penalties[0])
        for S, slot in zip(b.penalties, b.slot_ids):
            Sb += lambdas[slot] * S
        w = np.linalg.eigvalsh((Sb + Sb.T) / 2.0)
        top = w[-1] if w.size else 0.0
        if top <= 0.0:
            continue
        pos = w[w > _RANK_TOL * top]
        total += float(np.log(pos).sum())
    return total


def _joint_spectra(penalties: list[np.ndarray]) -> np.ndarray | None:
    """Per-slot eigenvalues in a shared eigenbasis, or None if none exists.

    Tensor and factor-smooth penalty families commute (Kronecker factors with
    identities), so their summed spectrum is a weighted sum of fixed per-slot
    spectra; that turns the per-evaluation log det+ into vector arithmetic.
    """
    total = np.zeros_like(penalties[0])
    for S in penalties:
        total += S
    _, V = np.linalg.eigh(total)
    spectra = np.empty((len(penalties), total.shape[0]))
    for j, S in enumerate(penalties):
        M = V.T @ S @ V
        d = np.diag(M).copy()
        scale = max(float(np.abs(d).max()), 1e-300)
        if np.abs(M - np.diag(d)).max() > 1e-8 * scale:
            return None
        spectra[j] = np.clip(d, 0.0, None)
    return spectra


def reml_score(system: WhitenedSystem, design: basis.DesignBlocks, lambdas) -> float:
    """Restricted-likelihood score at fixed lambdas (lower is better)."""
    lambdas = _check_lambdas(design, lambdas)
    n = len(system.y)
    m_p = design.total_null_dim
    if n <= m_p:
        raise FitError(f"need more than {m_p} rows, got {n}")
    M, rhs = _augmented(system, design, lambdas)
    beta, logdet_a = _qr_solve(M, rhs, design)
    resid = rhs - M @ beta
    dev = float(resid @ resid)
    if dev <= 0.0:
        raise FitError("degenerate exact fit: zero penalized deviance")
    phi = dev / (n - m_p)
    return 0.5 * ((n - m_p) * (math.log(2.0 * math.pi * phi) + 1.0) + logdet_a - logdet_penalty(design, lambdas))


class _Prepared:
    """Cached cross-products so the lambda search costs O(p^3) per step."""

    def __init__(self, system: WhitenedSystem, design: basis.DesignBlocks):
        self.design = design
        self.xtx = system.x.T @ system.x
        self.xty = system.x.T @ system.y
        self.yty = float(system.y @ system.y)
        self.n = len(system.y)
        self.m_p = design.total_null_dim
        if self.n <= self.m_p:
            raise FitError(f"need more than {self.m_p} rows, got {self.n}")
        # blocks with one slot have a lambda-free positive spectrum
        self._single: list[tuple[int, int, float]] = []
        # simultaneously diagonalizable multi-slot blocks: per-slot spectra
        self._diagonal: list[tuple[list[int], np.ndarray]] = []
        self._multi: list[basis.TermBlock] = []
        for b in design.blocks:
            if len(b.penalties) == 1:
                w = np.linalg.eigvalsh(b.penalties[0])
                top = w[-1] if w.size else 0.0
                if top > 0.0:
                    pos = w[w > _RANK_TOL * top]
                    self._single.append((b.slot_ids[0], len(pos), float(np.log(pos).sum())))
            elif len(b.penalties) > 1:
                spectra = _joint_spectra(b.penalties)
                if spectra is not None:
                    self._diagonal.append((b.slot_ids, spectra))
                else:
                    self._multi.append(b)

    def _logdet_penalty(self, lambdas: np.ndarray) -> float:
        total = 0.0
        for slot, rank, base in self._single:
            if lambdas[slot] > 0.0:
                total += rank * math.log(lambdas[slot]) + base
        for slots, spectra in self._diagonal:
            d = lambdas[slots] @ spectra
            top = d.max() if d.size else 0.0
            if top > 0.0:
                pos = d[d > _RANK_TOL * top]
                total += float(np.log(pos).sum())
        for b in self._multi:
            Sb = np.zeros_like(b.penalties[0])
            for S, slot in zip(b.penalties, b.slot_ids):
                Sb += lambdas[slot] * S
            w = np.linalg.eigvalsh(Sb)
            top = w[-1] if w.size else 0.0
            if top > 0.0:
                pos = w[w > _RANK_TOL * top]
                total += float(np.log(pos).sum())
        return total

    def factor(self, lambdas: np.ndarray):
        """Cholesky factor of X'X + S plus beta, deviance, and log det."""
        A = self.xtx + self.design.penalty_total(lambdas)
        try:
            cho = sla.cho_factor(A, lower=True)
        except np.linalg.LinAlgError:
            raise FitError("penalized normal matrix is not positive definite") from None
        beta = sla.cho_solve(cho, self.xty)
        dev = self.yty - float(beta @ self.xty)
        logdet_a = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
        return cho, beta, dev, logdet_a

    def score(self, lambdas: np.ndarray) -> float:
        try:
            _, _, dev, logdet_a = self.factor(lambdas)
        except FitError:
            return np.inf
        if dev <= 0.0 or not np.isfinite(dev):
            return np.inf
        phi = dev / (self.n - self.m_p)
        return 0.5 * (
            (self.n - self.m_p) * (math.log(2.0 * math.pi * phi) + 1.0)
            + logdet_a
            - self._logdet_penalty(lambdas)
        )

    def score_log(self, log_lambdas: np.ndarray) -> float:
        return self.score(np.exp(log_lambdas))


@dataclass
class LambdaSearch:
    lambdas: np.ndarray
    score: float
    converged: bool


def optimize_lambdas(
    system: WhitenedSystem,
    design: basis.DesignBlocks,
    starts=MULTISTART,
    maxiter: int = 200,
) -> LambdaSearch:
    """Quasi-Newton REML minimization over log-lambda with multiple starts."""
    if design.n_lambda_slots > 12:
        raise DataError(f"{design.n_lambda_slots} smoothing parameters exceeds the supported 12")
    prep = _Prepared(system, design)
    if design.n_lambda_slots == 0:
        lam = np.zeros(0)
        return LambdaSearch(lam, prep.score(lam), True)
    best = None
    for start in starts:
        x0 = np.full(design.n_lambda_slots, math.log(start))
        res = minimize(
            prep.score_log,
            x0,
            method="L-BFGS-B",
            bounds=[LOG_LAMBDA_BOUNDS] * design.n_lambda_slots,
            options={"maxiter": maxiter, "ftol": 1e-12, "gtol": 1e-5, "eps": 1e-6},
        )
        if best is None or res.fun < best[0]:
            best = (float(res.fun), res.x.copy(), bool(res.success))
    if best is None or not np.isfinite(best[0]):
        raise FitError("smoothing-parameter search failed from every start")
    return LambdaSearch(np.exp(best[1]), best[0], best[2])


def edf(system: WhitenedSystem, design: basis.DesignBlocks, lambdas):
    """Per-term effective degrees of freedom and their total.

    Uses diag(F) with F = (X'X + S)^{-1} X'X; unpenalized columns contribute
    exactly 1 each.
    """
    lambdas = _check_lambdas(design, lambdas)
    prep = _Prepared(system, design)
    return _edf_from(prep, lambdas)


def _edf_from(prep: _Prepared, lambdas: np.ndarray):
    cho, _, _, _ = prep.factor(lambdas)
    S = prep.design.penalty_total(lambdas)
    diag_f = 1.0 - np.diag(sla.cho_solve(cho, S))
    a, z = prep.design.parametric_span
    per_term = {"parametric": float(diag_f[a:z].sum())}
    for b in prep.design.blocks:
        per_term[b.label] = float(diag_f[b.span[0] : b.span[1]].sum())
    return per_term, float(diag_f.sum())


@dataclass
class FittedGamm:
    """Everything downstream summaries and diagnostics need."""

    beta: np.ndarray
    v_beta: np.ndarray
    lambdas: np.ndarray
    sigma2: float
    rho: float
    edf_per_term: dict[str, float]
    edf_total: float
    reml_score: float
    deviance: float
    residuals_raw: np.ndarray
    residuals_whitened: np.ndarray
    fitted: np.ndarray
    converged: bool
    design: basis.DesignBlocks
    bound: formula.BoundSpec
    series: dataio.SeriesIndex
    y: np.ndarray

    @property
    def n(self) -> int:
        return len(self.y)


def fit(bound: formula.BoundSpec, data: dataio.Dataset) -> FittedGamm:
    """Assemble, whiten, pick lambdas by REML, and solve."""
    spec = bound.spec
    design = basis.assemble_design(bound, data)
    y = data[spec.response].values
    if spec.ar_start_column is not None:
        series = dataio.build_series_index(data, spec.ar_start_column)
    else:
        series = dataio.SeriesIndex.single(data.n_rows)
    system = whiten(design.X, y, series, spec.rho)

    search = optimize_lambdas(system, design)
    beta, dev = fit_pls(system, design, search.lambdas)
    if dev <= 0.0:
        raise FitError("degenerate exact fit: zero penalized deviance")

    prep = _Prepared(system, design)
    cho, _, _, _ = prep.factor(search.lambdas)
    n, m_p = prep.n, prep.m_p
    sigma2 = dev / (n - m_p)
    v_beta = sigma2 * sla.cho_solve(cho, np.eye(design.n_columns))
    v_beta = (v_beta + v_beta.T) / 2.0
    per_term, tau = _edf_from(prep, search.lambdas)

    fitted = design.X @ beta
    return FittedGamm(
        beta=beta,
        v_beta=v_beta,
        lambdas=search.lambdas,
        sigma2=float(sigma2),
        rho=spec.rho,
        edf_per_term=per_term,
        edf_total=tau,
        reml_score=reml_score(system, design, search.lambdas),
        deviance=float(dev),
        residuals_raw=y - fitted,
        residuals_whitened=system.y - system.x @ beta,
        fitted=fitted,
        converged=search.converged,
        design=design,
        bound=bound,
        series=series,
        y=np.asarray(y, dtype=float).copy(),
    )
