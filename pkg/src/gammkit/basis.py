"""Design-matrix blocks and wiggliness penalties for every smooth class.

Single-covariate smooths use a rank-reduced thin plate construction (radial
basis r^3 with a {1, x} null space, eigen-truncated to k columns).  Tensor
product smooths use cubic regression spline marginals with one penalty per
margin.  Factor smooths replicate a shared spline basis per factor level with
two shared smoothing parameters (wiggliness + null-space ridge).  Random
effects are indicator blocks with an identity penalty.

Identifiability: thin plate, tensor, and by-smooth blocks get a sum-to-zero
constraint absorbed by a rank-1 orthogonal reparameterization; factor smooths
and random effects are identified by shrinkage and pass through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solveh_banded

from . import dataio, formula
from .errors import DataError

RANK_TOL = 1e-10  # eigenvalue threshold, relative to the largest eigenvalue
TENSOR_COLUMN_CAP = 400

PARAMETRIC = "parametric"


def floor_psd(S: np.ndarray) -> np.ndarray:
    """Symmetrize and clamp tiny negative eigenvalues to zero."""
    S = (S + S.T) / 2.0
    w, V = np.linalg.eigh(S)
    if w.size == 0 or w[0] >= 0.0:
        return S
    w = np.clip(w, 0.0, None)
    return (V * w) @ V.T


def penalty_rank(S: np.ndarray) -> int:
    w = np.linalg.eigvalsh((S + S.T) / 2.0)
    top = w[-1] if w.size else 0.0
    if top <= 0.0:
        return 0
    return int(np.sum(w > RANK_TOL * top))


def null_space_basis(S: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the penalty null space (columns)."""
    w, V = np.linalg.eigh((S + S.T) / 2.0)
    top = w[-1] if w.size else 0.0
    if top <= 0.0:
        return V
    return V[:, w <= RANK_TOL * top]


def _householder_complement(c: np.ndarray) -> np.ndarray:
    """Orthonormal basis (w x (w-1)) of the hyperplane orthogonal to c."""
    w = len(c)
    v = c.astype(float).copy()
    nrm = np.linalg.norm(v)
    if nrm == 0.0:
        return np.eye(w)[:, 1:]
    v[0] += np.copysign(nrm, v[0] if v[0] != 0.0 else 1.0)
    H = np.eye(w) - 2.0 * np.outer(v, v) / (v @ v)
    return H[:, 1:]


@dataclass
class TermBlock:
    """One smooth term's slice of the design matrix."""

    label: str
    kind: str
    penalties: list[np.ndarray]
    null_dim: int
    evaluator: object | None = None
    constraint: np.ndarray | None = None
    span: tuple[int, int] = (0, 0)
    slot_ids: list[int] = field(default_factory=list)
    covariates: tuple[str, ...] = ()
    by_var: str | None = None
    by_level: str | None = None
    by_mode: str | None = None
    term_label: str | None = None
    coef_names: list[str] | None = None
    cov_ranges: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def width(self) -> int:
        return self.span[1] - self.span[0]


@dataclass
class DesignBlocks:
    """Assembled design matrix with per-term spans and penalty bindings."""

    X: np.ndarray
    blocks: list[TermBlock]
    parametric_span: tuple[int, int]
    parametric_names: list[str]
    n_lambda_slots: int
    total_null_dim: int

    @property
    def n_columns(self) -> int:
        return self.X.shape[1]

    def block(self, label: str) -> TermBlock:
        for b in self.blocks:
            if b.label == label:
                return b
        raise DataError(f"no smooth term labelled {label!r}")

    def penalty_total(self, lambdas) -> np.ndarray:
        """Dense p x p penalty sum over all slots at the given lambdas."""
        lambdas = np.asarray(lambdas, dtype=float)
        if lambdas.shape != (self.n_lambda_slots,):
            raise DataError(
                f"expected {self.n_lambda_slots} smoothing parameters, got {lambdas.shape}"
            )
        p = self.n_columns
        S = np.zeros((p, p))
        for b in self.blocks:
            a, z = b.span
            for Sj, slot in zip(b.penalties, b.slot_ids):
                S[a:z, a:z] += lambdas[slot] * Sj
        return S


# ---------------------------------------------------------------------------
# cubic regression spline marginal


@dataclass
class CrsBasis:
    """Value-at-knot parameterized natural cubic spline basis."""

    name: str
    knots: np.ndarray
    second_deriv_map: np.ndarray  # k x k: coefficient vector -> f'' at knots
    penalty: np.ndarray           # integrated squared second derivative

    @property
    def dim(self) -> int:
        return len(self.knots)

    def design(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        kn = self.knots
        k = len(kn)
        f2 = self.second_deriv_map
        j = np.clip(np.searchsorted(kn, x, side="right") - 1, 0, k - 2)
        h = kn[j + 1] - kn[j]
        xi = np.clip(x, kn[0], kn[-1])
        am = (kn[j + 1] - xi) / h
        ap = (xi - kn[j]) / h
        cm = ((kn[j + 1] - xi) ** 3 / h - h * (kn[j + 1] - xi)) / 6.0
        cp = ((xi - kn[j]) ** 3 / h - h * (xi - kn[j])) / 6.0
        X = cm[:, None] * f2[j] + cp[:, None] * f2[j + 1]
        rows = np.arange(len(x))
        X[rows, j] += am
        X[rows, j + 1] += ap
        # Natural linear extension beyond the end knots.
        left = x < kn[0]
        if np.any(left):
            X[left] += (x[left] - kn[0])[:, None] * self._end_slope_row(0)
        right = x > kn[-1]
        if np.any(right):
            X[right] += (x[right] - kn[-1])[:, None] * self._end_slope_row(-1)
        return X

    def _end_slope_row(self, end: int) -> np.ndarray:
        kn, f2 = self.knots, self.second_deriv_map
        row = np.zeros(self.dim)
        if end == 0:
            h = kn[1] - kn[0]
            row[0], row[1] = -1.0 / h, 1.0 / h
            row -= h / 6.0 * f2[1]
        else:
            h = kn[-1] - kn[-2]
            row[-2], row[-1] = -1.0 / h, 1.0 / h
            row += h / 6.0 * f2[-2]
        return row


def build_crs_marginal(x, k: int, name: str = "x") -> CrsBasis:
    """Cubic regression spline on k knots placed at the quantiles of x."""
    x = np.asarray(x, dtype=float)
    if k < 3:
        raise DataError(f"basis dimension k={k} must be >= 3 for {name!r}")
    knots = np.unique(np.quantile(x, np.linspace(0.0, 1.0, k)))
    if len(knots) < 3:
        raise DataError(f"covariate {name!r}: fewer than 3 distinct quantile knots")
    k = len(knots)
    h = np.diff(knots)
    D = np.zeros((k - 2, k))
    for i in range(k - 2):
        D[i, i] = 1.0 / h[i]
        D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        D[i, i + 2] = 1.0 / h[i + 1]
    # symmetric tridiagonal Gram matrix of the piecewise-linear f'' basis
    if k == 3:
        ab = np.array([(h[0] + h[1]) / 3.0])[None, :]
    else:
        ab = np.zeros((2, k - 2))
        ab[0, 1:] = h[1:-1] / 6.0
        ab[1, :] = (h[:-1] + h[1:]) / 3.0
    F = solveh_banded(ab, D)  # (k-2) x k, maps values to interior f'' at knots
    S = floor_psd(D.T @ F)
    f2 = np.vstack([np.zeros(k), F, np.zeros(k)])
    return CrsBasis(name, knots, f2, S)


# ---------------------------------------------------------------------------
# thin plate regression spline (one covariate)


@dataclass
class TprsEvaluator:
    name: str
    sites: np.ndarray
    reduced_map: np.ndarray  # (n_sites x (k-2)) eigen-truncated radial weights

    def design(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        E = np.abs(x[:, None] - self.sites[None, :]) ** 3
        radial = E @ self.reduced_map
        return np.hstack([radial, np.ones((len(x), 1)), x[:, None]])


def build_tprs(x, k: int, name: str = "x") -> tuple[np.ndarray, TermBlock]:
    """Unconstrained 1-D thin plate block: k columns, penalty null space {1, x}."""
    x = np.asarray(x, dtype=float)
    if k < 3:
        raise DataError(f"basis dimension k={k} must be >= 3 for s({name})")
    sites = np.unique(x)
    m = len(sites)
    if m < k:
        raise DataError(f"s({name}): only {m} distinct values for k={k}")
    E = np.abs(sites[:, None] - sites[None, :]) ** 3
    w, V = np.linalg.eigh(E)
    order = np.argsort(-np.abs(w), kind="stable")
    U = V[:, order[:k]]
    d = w[order[:k]]
    # absorb the orthogonality-to-null-space condition on the radial weights
    T = np.column_stack([np.ones(m), sites])
    C = T.T @ U
    _, sv, vt = np.linalg.svd(C)
    Z = vt[2:].T  # k x (k-2)
    S_red = floor_psd(Z.T @ (d[:, None] * Z))
    reduced_map = U @ Z
    evaluator = TprsEvaluator(name, sites, reduced_map)
    cols = evaluator.design(x)
    penalty = np.zeros((k, k))
    penalty[: k - 2, : k - 2] = S_red
    block = TermBlock(
        label=f"s({name})",
        kind=formula.TPRS,
        penalties=[penalty],
        null_dim=2,
        evaluator=evaluator,
        covariates=(name,),
        cov_ranges={name: (float(x.min()), float(x.max()))},
    )
    return cols, block


# ---------------------------------------------------------------------------
# tensor product smooth


@dataclass
class TensorEvaluator:
    marginals: list[CrsBasis]

    def design(self, cols: dict[str, np.ndarray]) -> np.ndarray:
        X = self.marginals[0].design(cols[self.marginals[0].name])
        for marg in self.marginals[1:]:
            M = marg.design(cols[marg.name])
            X = (X[:, :, None] * M[:, None, :]).reshape(len(M), -1)
        return X


def build_tensor(data_cols: dict[str, np.ndarray], names: tuple[str, ...], ks) -> tuple[np.ndarray, TermBlock]:
    """Row-wise Kronecker of CRS marginals, one penalty slot per marginal."""
    if len(names) < 2:
        raise DataError("tensor smooths need at least two covariates")
    marginals = [build_crs_marginal(data_cols[nm], kk, name=nm) for nm, kk in zip(names, ks)]
    dims = [m.dim for m in marginals]
    if int(np.prod(dims)) > TENSOR_COLUMN_CAP:
        raise DataError(
            f"te({','.join(names)}): {int(np.prod(dims))} columns exceeds cap {TENSOR_COLUMN_CAP}"
        )
    evaluator = TensorEvaluator(marginals)
    cols = evaluator.design(data_cols)
    penalties = []
    for j, marg in enumerate(marginals):
        mats = [np.eye(d) for d in dims]
        mats[j] = marg.penalty
        S = mats[0]
        for M in mats[1:]:
            S = np.kron(S, M)
        penalties.append(floor_psd(S))
    block = TermBlock(
        label=f"te({','.join(names)})",
        kind=formula.TENSOR,
        penalties=penalties,
        null_dim=int(np.prod([2] * len(dims))),
        evaluator=evaluator,
        covariates=tuple(names),
        cov_ranges={nm: (float(data_cols[nm].min()), float(data_cols[nm].max())) for nm in names},
    )
    return cols, block


# ---------------------------------------------------------------------------
# factor smooth (shared-lambda per-level curves, shrunk to zero)


@dataclass
class FsEvaluator:
    crs: CrsBasis
    levels: list[str]

    def level_design(self, x, level_index: int) -> tuple[np.ndarray, int]:
        """Design for one level's curve plus its column offset in the block."""
        M = self.crs.design(x)
        return M, level_index * self.crs.dim


def build_factor_smooth(x, codes, levels, k: int, cov_name: str, fac_name: str) -> tuple[np.ndarray, TermBlock]:
    """Per-level copies of one spline basis with two shared penalty slots.

    Slot 0 penalizes wiggliness in every level's curve; slot 1 is a ridge on
    the null-space (constant and linear) coefficients so whole curves shrink
    to zero.  No centering constraint: the term behaves like a random effect.
    """
    x = np.asarray(x, dtype=float)
    codes = np.asarray(codes)
    crs = build_crs_marginal(x, k, name=cov_name)
    kk = crs.dim
    L = len(levels)
    for li, lv in enumerate(levels):
        if len(np.unique(x[codes == li])) < 3:
            raise DataError(f"fs({cov_name},{fac_name}): level {lv!r} has <3 distinct values")
    base = crs.design(x)
    cols = np.zeros((len(x), L * kk))
    for li in range(L):
        mask = codes == li
        cols[mask, li * kk : (li + 1) * kk] = base[mask]
    N = null_space_basis(crs.penalty)
    ridge = N @ N.T
    S_wiggle = np.kron(np.eye(L), crs.penalty)
    S_ridge = np.kron(np.eye(L), ridge)
    block = TermBlock(
        label=f"fs({cov_name},{fac_name})",
        kind=formula.FACTOR_SMOOTH,
        penalties=[S_wiggle, S_ridge],
        null_dim=0,
        evaluator=FsEvaluator(crs, list(levels)),
        covariates=(cov_name, fac_name),
        coef_names=[f"{lv}[{j}]" for lv in levels for j in range(kk)],
        cov_ranges={cov_name: (float(x.min()), float(x.max()))},
    )
    return cols, block


# ---------------------------------------------------------------------------
# random-effect smooth (indicators + identity penalty)


def build_random_effect(columns: list[dataio.Column]) -> tuple[np.ndarray, TermBlock]:
    """Indicator (or indicator x numeric) block with an identity penalty."""
    first = columns[0]
    if not first.is_factor:
        raise DataError(f"random-effect term: first column {first.name!r} must be a factor")
    n = len(first.values)
    L1 = len(first.levels)
    if len(columns) == 1:
        X = np.zeros((n, L1))
        X[np.arange(n), first.values] = 1.0
        names = list(first.levels)
        label = f"re({first.name})"
        covs = (first.name,)
    else:
        second = columns[1]
        label = f"re({first.name},{second.name})"
        covs = (first.name, second.name)
        if second.is_factor:
            L2 = len(second.levels)
            X = np.zeros((n, L1 * L2))
            X[np.arange(n), first.values * L2 + second.values] = 1.0
            names = [f"{a}:{b}" for a in first.levels for b in second.levels]
        else:
            X = np.zeros((n, L1))
            X[np.arange(n), first.values] = second.values
            names = [f"{lv}:{second.name}" for lv in first.levels]
    block = TermBlock(
        label=label,
        kind=formula.RANDOM_EFFECT,
        penalties=[np.eye(X.shape[1])],
        null_dim=0,
        covariates=covs,
        coef_names=names,
    )
    return X, block


# ---------------------------------------------------------------------------
# constraints and by-smooths


def apply_constraints(cols: np.ndarray, block: TermBlock) -> tuple[np.ndarray, TermBlock]:
    """Absorb the sum-to-zero constraint; fs and re blocks pass through."""
    if block.kind not in (formula.TPRS, formula.TENSOR):
        return cols, block
    Z = _householder_complement(cols.sum(axis=0))
    if block.constraint is not None:
        raise DataError(f"block {block.label!r} is already constrained")
    cols = cols @ Z
    block.penalties = [floor_psd(Z.T @ S @ Z) for S in block.penalties]
    block.constraint = Z
    total = block.penalties[0].copy()
    for S in block.penalties[1:]:
        total += S
    block.null_dim = cols.shape[1] - penalty_rank(total)
    return cols, block


def build_by_smooth(
    cols: np.ndarray,
    block: TermBlock,
    by_col: dataio.Column,
    mode: str,
) -> list[tuple[np.ndarray, TermBlock]]:
    """Replicate a smooth recipe per by-level.

    Ordered by-factors give difference smooths: the reference level is covered
    by the main smooth and each remaining level gets a masked copy.  Unordered
    factors give one full smooth per level.
    """
    levels = by_col.levels
    k_needed = cols.shape[1]
    out = []
    start = 1 if mode == "difference" else 0
    for li in range(start, len(levels)):
        mask = by_col.values == li
        if int(mask.sum()) < k_needed:
            raise DataError(
                f"{block.label}: by-level {levels[li]!r} has {int(mask.sum())} rows, "
                f"needs at least {k_needed}"
            )
        sub = np.where(mask[:, None], cols, 0.0)
        sub_block = TermBlock(
            label=f"{block.label}:{by_col.name}={levels[li]}",
            kind=block.kind,
            penalties=[S.copy() for S in block.penalties],
            null_dim=block.null_dim,
            evaluator=block.evaluator,
            covariates=block.covariates,
            by_var=by_col.name,
            by_level=levels[li],
            by_mode=mode,
            cov_ranges=dict(block.cov_ranges),
        )
        out.append(apply_constraints(sub, sub_block))
    return out


# ---------------------------------------------------------------------------
# parametric columns and full assembly


def build_parametric(data: dataio.Dataset, terms) -> tuple[np.ndarray, list[str]]:
    """Intercept, treatment-coded factor dummies, and numeric columns."""
    n = data.n_rows
    cols = [np.ones((n, 1))]
    names = ["Intercept"]
    for name in terms:
        col = data[name]
        if col.kind == dataio.NUMERIC:
            if col.values.size and np.ptp(col.values) == 0.0:
                raise DataError(f"numeric term {name!r} is constant (collinear with intercept)")
            cols.append(col.values[:, None])
            names.append(name)
        elif col.kind == dataio.BOOLEAN:
            cols.append(col.values.astype(float)[:, None])
            names.append(f"{name}=true")
        else:
            for li, lv in enumerate(col.levels[1:], start=1):
                cols.append((col.values == li).astype(float)[:, None])
                names.append(f"{name}={lv}")
    return np.hstack(cols), names


def assemble_design(bound: formula.BoundSpec, data: dataio.Dataset) -> DesignBlocks:
    """Concatenate the parametric span and every smooth block, in formula order."""
    spec = bound.spec
    n = data.n_rows
    X_param, param_names = build_parametric(data, spec.parametric_terms)

    pieces: list[tuple[np.ndarray, TermBlock]] = []
    for term in spec.smooth_terms:
        if term.kind == formula.TPRS:
            x = data[term.covariates[0]].values
            cols, blk = build_tprs(x, term.basis_dim[0], name=term.covariates[0])
        elif term.kind == formula.TENSOR:
            data_cols = {nm: data[nm].values for nm in term.covariates}
            cols, blk = build_tensor(data_cols, term.covariates, term.basis_dim)
        elif term.kind == formula.FACTOR_SMOOTH:
            xcol = data[term.covariates[0]]
            fcol = data[term.covariates[1]]
            cols, blk = build_factor_smooth(
                xcol.values, fcol.values, fcol.levels, term.basis_dim[0], xcol.name, fcol.name
            )
        else:
            cols, blk = build_random_effect([data[nm] for nm in term.covariates])
        blk.term_label = term.label

        if term.by_var is not None:
            mode = bound.by_modes[term.label]
            for sub_cols, sub_blk in build_by_smooth(cols, blk, data[term.by_var], mode):
                sub_blk.term_label = term.label
                pieces.append((sub_cols, sub_blk))
        else:
            pieces.append(apply_constraints(cols, blk))

    offset = X_param.shape[1]
    slot = 0
    all_cols = [X_param]
    blocks = []
    for cols, blk in pieces:
        width = cols.shape[1]
        blk.span = (offset, offset + width)
        blk.slot_ids = list(range(slot, slot + len(blk.penalties)))
        slot += len(blk.penalties)
        offset += width
        all_cols.append(cols)
        blocks.append(blk)

    X = np.hstack(all_cols)
    if X.shape[1] >= n:
        widths = ", ".join(f"{b.label}({b.width})" for b in blocks)
        raise DataError(
            f"{X.shape[1]} coefficients for {n} rows; terms: parametric({X_param.shape[1]}), {widths}"
        )
    total_null = X_param.shape[1] + sum(b.null_dim for b in blocks)
    return DesignBlocks(
        X=X,
        blocks=blocks,
        parametric_span=(0, X_param.shape[1]),
        parametric_names=param_names,
        n_lambda_slots=slot,
        total_null_dim=total_null,
    )
