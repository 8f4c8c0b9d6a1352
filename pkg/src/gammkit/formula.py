"""Model-formula mini-language: `response ~ term + term + ...`.

Terms are either bare column names (parametric main effects), `1` (explicit
intercept), or smooth constructors:

    s(x)                        penalized thin plate spline in one covariate
    s(x, by=f)                  per-level difference or per-level smooths
    s(x, f, bs="fs", m=1)       factor smooth: one curve per level of f
    s(f, bs="re")               random intercepts for factor f
    s(f, g, bs="re")            random interaction effects (or slopes if g numeric)
    te(x, z[, by=f][, k=...])   tensor product smooth, >= 2 covariates

Keyword options: `by=`, `bs=` ("fs"/"re"), `k=` (basis dimension, broadcast
over tensor marginals), `m=` (factor-smooth shrinkage flag).  Anything else
is rejected.  Parsing is pure: same text, same ModelSpec.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

from . import dataio
from .errors import DataError, FormulaError, FormulaSyntaxError

TPRS = "tprs"
TENSOR = "tensor"
FACTOR_SMOOTH = "factor_smooth"
RANDOM_EFFECT = "random_effect"

DEFAULT_K_TPRS = 10
DEFAULT_K_TENSOR = 5
DEFAULT_K_FS = 5


@dataclass(frozen=True)
class SmoothTerm:
    kind: str
    covariates: tuple[str, ...]
    basis_dim: tuple[int, ...]
    by_var: str | None = None
    shrink: int | None = None

    @property
    def label(self) -> str:
        covs = ",".join(self.covariates)
        if self.kind == TPRS:
            base = f"s({covs}"
        elif self.kind == TENSOR:
            base = f"te({covs}"
        elif self.kind == FACTOR_SMOOTH:
            return f"fs({covs})"
        else:
            return f"re({covs})"
        if self.by_var is not None:
            base += f",by={self.by_var}"
        return base + ")"


@dataclass(frozen=True)
class ModelSpec:
    """Parsed model: response, parametric terms, smooth terms, fit options."""

    response: str
    parametric_terms: tuple[str, ...]
    smooth_terms: tuple[SmoothTerm, ...]
    rho: float = 0.0
    ar_start_column: str | None = None
    family: str = "gaussian"

    def with_options(self, rho: float = 0.0, ar_start_column: str | None = None) -> "ModelSpec":
        """Attach AR(1) options, enforcing the rho/start-column invariants."""
        if not 0.0 <= rho < 1.0:
            raise DataError(f"rho must lie in [0, 1), got {rho}")
        if rho > 0.0 and ar_start_column is None:
            raise DataError("rho > 0 requires a series-start column")
        return replace(self, rho=float(rho), ar_start_column=ar_start_column)


_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      | (?P<name>[A-Za-z_][A-Za-z0-9_.]*)
      | (?P<int>\d+)
      | (?P<string>"[^"]*")
      | (?P<op>[~+(),=])
    """,
    re.VERBOSE,
)

_END = ("end", "", -1)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(pos, ("name", "number", "string", "operator"), repr(text[pos]))
        pos = m.end()
        kind = m.lastgroup
        if kind == "ws":
            continue
        value = m.group()
        if kind == "op":
            kind = value
        elif kind == "string":
            value = value[1:-1]
        tokens.append((kind, value, m.start()))
    tokens.append((_END[0], _END[1], len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self, ahead: int = 0):
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def advance(self):
        tok = self.tokens[self.pos]
        if tok[0] != "end":
            self.pos += 1
        return tok

    def expect(self, kind: str, expected: tuple[str, ...]):
        tok = self.peek()
        if tok[0] != kind:
            raise FormulaSyntaxError(tok[2], expected, tok[1] or "end of input")
        return self.advance()

    def fail(self, expected: tuple[str, ...]):
        tok = self.peek()
        raise FormulaSyntaxError(tok[2], expected, tok[1] or "end of input")

    def parse(self) -> ModelSpec:
        response = self.expect("name", ("response name",))[1]
        self.expect("~", ("'~'",))
        parametric: list[str] = []
        smooths: list[SmoothTerm] = []
        while True:
            self._term(parametric, smooths)
            if self.peek()[0] == "+":
                self.advance()
                continue
            break
        self.expect("end", ("'+'", "end of formula"))

        labels = list(parametric) + [t.label for t in smooths]
        seen = set()
        for lab in labels:
            if lab in seen:
                raise FormulaError(f"duplicate term {lab!r}")
            seen.add(lab)
        used = set(parametric)
        for t in smooths:
            used.update(t.covariates)
            if t.by_var:
                used.add(t.by_var)
        if response in used:
            raise FormulaError(f"response {response!r} also appears as a predictor")
        return ModelSpec(response, tuple(parametric), tuple(smooths))

    def _term(self, parametric: list[str], smooths: list[SmoothTerm]):
        tok = self.peek()
        if tok[0] == "int":
            if tok[1] != "1":
                self.fail(("term name", "'1'", "s(...)", "te(...)"))
            self.advance()  # explicit intercept; always present anyway
            return
        if tok[0] != "name":
            self.fail(("term name", "s(...)", "te(...)"))
        if tok[1] in ("s", "te") and self.peek(1)[0] == "(":
            smooths.append(self._smooth(tok[1]))
            return
        parametric.append(self.advance()[1])

    def _smooth(self, word: str) -> SmoothTerm:
        self.advance()  # constructor name
        self.expect("(", ("'('",))
        covariates: list[str] = []
        options: dict[str, object] = {}
        while True:
            tok = self.peek()
            if tok[0] != "name":
                self.fail(("covariate name", "option"))
            if self.peek(1)[0] == "=":
                key_tok = self.advance()
                self.advance()  # '='
                self._option(word, key_tok, options)
            else:
                if options:
                    raise FormulaSyntaxError(tok[2], ("option (after keyword arguments)",), tok[1])
                covariates.append(self.advance()[1])
            tok = self.peek()
            if tok[0] == ",":
                self.advance()
                continue
            self.expect(")", ("','", "')'"))
            break
        return self._classify(word, covariates, options)

    def _option(self, word: str, key_tok, options: dict):
        key = key_tok[1]
        if key in options:
            raise FormulaError(f"duplicate option {key!r} in {word}(...)")
        if key == "by":
            options[key] = self.expect("name", ("factor name",))[1]
        elif key == "bs":
            value = self.expect("string", ('basis code string ("fs" or "re")',))[1]
            if value not in ("fs", "re"):
                raise FormulaError(f'unknown basis code bs="{value}"')
            options[key] = value
        elif key in ("k", "m"):
            options[key] = int(self.expect("int", ("integer",))[1])
        else:
            raise FormulaError(f"unknown option {key!r} in {word}(...)")

    def _classify(self, word: str, covariates: list[str], options: dict) -> SmoothTerm:
        bs = options.get("bs")
        k = options.get("k")
        m = options.get("m")
        by = options.get("by")
        if word == "te":
            if bs is not None:
                raise FormulaError("te(...) does not accept bs=")
            if m is not None:
                raise FormulaError("m= is only valid for factor smooths (bs=\"fs\")")
            if len(covariates) < 2:
                raise FormulaError("te(...) needs at least two covariates")
            kk = k if k is not None else DEFAULT_K_TENSOR
            if kk < 3:
                raise FormulaError(f"tensor marginal basis dimension k={kk} must be >= 3")
            return SmoothTerm(TENSOR, tuple(covariates), (kk,) * len(covariates), by_var=by)

        if not covariates:
            raise FormulaError("s(...) needs at least one covariate")
        if bs == "re":
            if by is not None:
                raise FormulaError('by= is not valid for bs="re"')
            if m is not None or k is not None:
                raise FormulaError('k=/m= are not valid for bs="re"')
            if len(covariates) > 2:
                raise FormulaError('bs="re" takes one or two columns')
            return SmoothTerm(RANDOM_EFFECT, tuple(covariates), ())
        if bs == "fs":
            if by is not None:
                raise FormulaError('by= is not valid for bs="fs"')
            if len(covariates) != 2:
                raise FormulaError('bs="fs" needs a numeric covariate and a factor')
            kk = k if k is not None else DEFAULT_K_FS
            if kk < 3:
                raise FormulaError(f"factor-smooth basis dimension k={kk} must be >= 3")
            return SmoothTerm(FACTOR_SMOOTH, tuple(covariates), (kk,), shrink=m)
        # plain s(): one covariate, thin plate construction
        if m is not None:
            raise FormulaError("m= is only valid for factor smooths (bs=\"fs\")")
        if len(covariates) != 1:
            raise FormulaError('s(...) with several covariates needs bs="fs" or bs="re"')
        kk = k if k is not None else DEFAULT_K_TPRS
        if kk < 3:
            raise FormulaError(f"basis dimension k={kk} must be >= 3")
        return SmoothTerm(TPRS, tuple(covariates), (kk,), by_var=by)


def parse_formula(text: str) -> ModelSpec:
    """Parse formula text into a ModelSpec. Raises FormulaError on bad input."""
    if not text or not text.strip():
        raise FormulaError("empty formula")
    return _Parser(text).parse()


def pretty_print(spec: ModelSpec) -> str:
    """Canonical text form; reparsing it yields a structurally equal spec."""
    parts = list(spec.parametric_terms)
    for t in spec.smooth_terms:
        args = list(t.covariates)
        if t.by_var is not None:
            args.append(f"by={t.by_var}")
        if t.kind == FACTOR_SMOOTH:
            args.append('bs="fs"')
        elif t.kind == RANDOM_EFFECT:
            args.append('bs="re"')
        if t.basis_dim:
            args.append(f"k={t.basis_dim[0]}")
        if t.kind == FACTOR_SMOOTH and t.shrink is not None:
            args.append(f"m={t.shrink}")
        word = "te" if t.kind == TENSOR else "s"
        parts.append(f"{word}({', '.join(args)})")
    rhs = " + ".join(parts) if parts else "1"
    return f"{spec.response} ~ {rhs}"


@dataclass(frozen=True)
class BoundSpec:
    """A ModelSpec checked against a concrete Dataset."""

    spec: ModelSpec
    n_rows: int
    column_kinds: dict[str, str]
    factor_levels: dict[str, list[str]]
    # per by-smooth label: "difference" (ordered by-factor, reference level
    # covered by the main smooth) or "per_level" (unordered factor)
    by_modes: dict[str, str]

    def levels_of(self, name: str) -> list[str]:
        return self.factor_levels[name]


def _require(data: dataio.Dataset, name: str, kinds: tuple[str, ...], role: str) -> dataio.Column:
    if name not in data:
        raise DataError(f"{role} {name!r}: no such column")
    col = data[name]
    if col.kind not in kinds:
        raise DataError(f"{role} {name!r} must be {' or '.join(kinds)}, got {col.kind}")
    return col


def validate_against(spec: ModelSpec, data: dataio.Dataset) -> BoundSpec:
    """Check every referenced column exists with a compatible kind."""
    factor_kinds = (dataio.FACTOR, dataio.ORDERED_FACTOR)
    _require(data, spec.response, (dataio.NUMERIC,), "response")

    kinds: dict[str, str] = {spec.response: dataio.NUMERIC}
    levels: dict[str, list[str]] = {}
    by_modes: dict[str, str] = {}

    def note(col: dataio.Column):
        kinds[col.name] = col.kind
        if col.is_factor:
            levels[col.name] = list(col.levels)

    for name in spec.parametric_terms:
        col = _require(data, name, (dataio.NUMERIC, dataio.BOOLEAN) + factor_kinds, "parametric term")
        if col.is_factor and len(col.levels) < 2:
            raise DataError(f"factor {name!r} has fewer than 2 levels")
        note(col)

    for term in spec.smooth_terms:
        if term.kind == TPRS:
            note(_require(data, term.covariates[0], (dataio.NUMERIC,), "smooth covariate"))
        elif term.kind == TENSOR:
            for c in term.covariates:
                note(_require(data, c, (dataio.NUMERIC,), "tensor covariate"))
        elif term.kind == FACTOR_SMOOTH:
            note(_require(data, term.covariates[0], (dataio.NUMERIC,), "factor-smooth covariate"))
            fac = _require(data, term.covariates[1], factor_kinds, "factor-smooth factor")
            if len(fac.levels) < 2:
                raise DataError(f"factor {fac.name!r} has fewer than 2 levels")
            note(fac)
        else:  # random effect
            fac = _require(data, term.covariates[0], factor_kinds, "random-effect factor")
            note(fac)
            if len(term.covariates) == 2:
                second = _require(
                    data, term.covariates[1], factor_kinds + (dataio.NUMERIC,), "random-effect column"
                )
                note(second)
        if term.by_var is not None:
            by = _require(data, term.by_var, factor_kinds, "by-factor")
            if len(by.levels) < 2:
                raise DataError(f"by-factor {by.name!r} has fewer than 2 levels")
            note(by)
            mode = "difference" if by.kind == dataio.ORDERED_FACTOR else "per_level"
            by_modes[term.label] = mode

    if spec.ar_start_column is not None:
        _require(data, spec.ar_start_column, (dataio.BOOLEAN,), "series-start column")

    return BoundSpec(spec, data.n_rows, kinds, levels, by_modes)
