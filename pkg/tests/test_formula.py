"""Formula parsing, pretty-printing, and dataset binding."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gammkit.formula as fm
from gammkit import simlab
from gammkit.dataio import Column, Dataset
from gammkit.errors import DataError, FormulaError, FormulaSyntaxError

NAMING = (
    'RT ~ Regularity + Number + Voicing + InitialNeighbors + InflectionalEntropy'
    ' + s(Frequency) + s(Trial, Subject, bs="fs", m=1) + s(Verb, bs="re")'
)
PITCH = (
    'PitchSemiTone ~ Sex + BranchingOrd + s(NormalizedTime)'
    ' + s(NormalizedTime, by=BranchingOrd)'
    ' + s(NormalizedTime, Speaker, bs="fs", m=1)'
    ' + s(NormalizedTime, Compound, bs="fs", m=1)'
    ' + s(Compound, Sex, bs="re")'
)
EEG = (
    'Amplitude ~ s(Time, k=10) + s(Time, by=ConstituentOrder, k=10)'
    ' + te(LogFreqC1, LogFreqC2, k=4)'
    ' + te(LogFreqC1, LogFreqC2, by=ConstituentOrder, k=4)'
    ' + s(LogCompFreq, k=4) + s(LogCompFreq, by=ConstituentOrder, k=4)'
    ' + s(Compound, bs="re") + s(Trial, Subject, bs="fs", m=1)'
    ' + s(Time, Subject, bs="fs", m=1)'
)


class TestParse:
    def test_naming_listing(self):
        spec = fm.parse_formula(NAMING)
        assert spec.response == "RT"
        assert spec.parametric_terms == (
            "Regularity", "Number", "Voicing", "InitialNeighbors", "InflectionalEntropy",
        )
        kinds = [t.kind for t in spec.smooth_terms]
        assert kinds == [fm.TPRS, fm.FACTOR_SMOOTH, fm.RANDOM_EFFECT]
        fs = spec.smooth_terms[1]
        assert fs.covariates == ("Trial", "Subject")
        assert fs.shrink == 1
        assert spec.smooth_terms[2].covariates == ("Verb",)

    def test_pitch_listing(self):
        spec = fm.parse_formula(PITCH)
        assert [t.kind for t in spec.smooth_terms] == [
            fm.TPRS, fm.TPRS, fm.FACTOR_SMOOTH, fm.FACTOR_SMOOTH, fm.RANDOM_EFFECT,
        ]
        assert spec.smooth_terms[1].by_var == "BranchingOrd"
        assert spec.smooth_terms[4].covariates == ("Compound", "Sex")

    def test_eeg_listing(self):
        spec = fm.parse_formula(EEG)
        assert len(spec.smooth_terms) == 9
        tensors = [t for t in spec.smooth_terms if t.kind == fm.TENSOR]
        assert len(tensors) == 2
        assert tensors[0].basis_dim == (4, 4)
        assert tensors[1].by_var == "ConstituentOrder"

    def test_minimal(self):
        spec = fm.parse_formula("y ~ x")
        assert spec.parametric_terms == ("x",)
        assert spec.smooth_terms == ()

    def test_three_term_mixture(self):
        spec = fm.parse_formula(
            'Amplitude ~ s(Time, k=10) + te(LogFreqC1, LogFreqC2, k=4)'
            ' + te(LogFreqC1, LogFreqC2, by=ConstituentOrder, k=4)'
        )
        t0, t1, t2 = spec.smooth_terms
        assert (t0.kind, t0.basis_dim) == (fm.TPRS, (10,))
        assert (t1.kind, t1.basis_dim) == (fm.TENSOR, (4, 4))
        assert t2.by_var == "ConstituentOrder"

    def test_whitespace_insensitive(self):
        a = fm.parse_formula('y~s(x,k=5)+s( t , g , bs="fs" )')
        b = fm.parse_formula('y ~ s(x, k=5) + s(t, g, bs="fs")')
        assert a == b

    def test_defaults(self):
        spec = fm.parse_formula('y ~ s(x) + te(a, b) + s(t, g, bs="fs")')
        assert spec.smooth_terms[0].basis_dim == (fm.DEFAULT_K_TPRS,)
        assert spec.smooth_terms[1].basis_dim == (fm.DEFAULT_K_TENSOR,) * 2
        assert spec.smooth_terms[2].basis_dim == (fm.DEFAULT_K_FS,)

    def test_intercept_only(self):
        spec = fm.parse_formula("y ~ 1")
        assert spec.parametric_terms == ()
        assert spec.smooth_terms == ()

    def test_parse_is_pure(self):
        assert fm.parse_formula(NAMING) == fm.parse_formula(NAMING)


class TestParseErrors:
    def test_syntax_error_offset_and_expected(self):
        text = "y ~ s(x,, k=3)"
        with pytest.raises(FormulaSyntaxError) as err:
            fm.parse_formula(text)
        assert err.value.offset == text.index(",,") + 1
        assert err.value.expected

    def test_missing_tilde(self):
        with pytest.raises(FormulaSyntaxError):
            fm.parse_formula("y s(x)")

    def test_unknown_bs(self):
        with pytest.raises(FormulaError, match="unknown basis"):
            fm.parse_formula('y ~ s(x, bs="cr")')

    def test_m_on_non_fs(self):
        with pytest.raises(FormulaError, match="m="):
            fm.parse_formula("y ~ s(x, m=1)")

    def test_two_covariates_without_bs(self):
        with pytest.raises(FormulaError):
            fm.parse_formula("y ~ s(x, z)")

    def test_duplicate_term(self):
        with pytest.raises(FormulaError, match="duplicate"):
            fm.parse_formula("y ~ s(x) + s(x)")

    def test_response_among_predictors(self):
        with pytest.raises(FormulaError, match="response"):
            fm.parse_formula("y ~ y + x")

    def test_small_k_rejected(self):
        with pytest.raises(FormulaError, match="k=2"):
            fm.parse_formula("y ~ s(x, k=2)")

    def test_interaction_syntax_rejected(self):
        with pytest.raises(FormulaSyntaxError):
            fm.parse_formula("y ~ a*b")
        with pytest.raises(FormulaSyntaxError):
            fm.parse_formula("y ~ a:b")

    def test_empty(self):
        with pytest.raises(FormulaError):
            fm.parse_formula("   ")

    def test_rho_requires_start_column(self):
        spec = fm.parse_formula("y ~ x")
        with pytest.raises(DataError, match="series-start"):
            spec.with_options(rho=0.3)
        with pytest.raises(DataError, match="rho"):
            spec.with_options(rho=1.2, ar_start_column="flag")


_NAMES = st.from_regex(r"[A-Za-z][A-Za-z0-9_]{0,6}", fullmatch=True)


@st.composite
def model_specs(draw):
    names = draw(st.lists(_NAMES, min_size=4, max_size=10, unique=True))
    response, pool = names[0], names[1:]
    parametric = []
    smooths = []
    idx = 0
    while idx < len(pool):
        choice = draw(st.integers(0, 4))
        if choice == 0:
            parametric.append(pool[idx])
            idx += 1
        elif choice == 1:
            k = draw(st.integers(3, 12))
            by = draw(st.sampled_from([None] + parametric)) if parametric else None
            smooths.append(fm.SmoothTerm(fm.TPRS, (pool[idx],), (k,), by_var=by))
            idx += 1
        elif choice == 2 and idx + 1 < len(pool):
            k = draw(st.integers(3, 6))
            smooths.append(fm.SmoothTerm(fm.TENSOR, (pool[idx], pool[idx + 1]), (k, k)))
            idx += 2
        elif choice == 3 and idx + 1 < len(pool):
            k = draw(st.integers(3, 8))
            m = draw(st.sampled_from([None, 1]))
            smooths.append(
                fm.SmoothTerm(fm.FACTOR_SMOOTH, (pool[idx], pool[idx + 1]), (k,), shrink=m)
            )
            idx += 2
        else:
            width = draw(st.integers(1, min(2, len(pool) - idx)))
            smooths.append(fm.SmoothTerm(fm.RANDOM_EFFECT, tuple(pool[idx : idx + width]), ()))
            idx += width
    return fm.ModelSpec(response, tuple(parametric), tuple(smooths))


@settings(max_examples=200, deadline=None)
@given(model_specs())
def test_pretty_print_round_trip(spec):
    assert fm.parse_formula(fm.pretty_print(spec)) == spec


class TestValidate:
    def _data(self):
        rng = np.random.default_rng(0)
        n = 40
        return Dataset.from_columns([
            Column.numeric("y", rng.normal(size=n)),
            Column.numeric("x", rng.uniform(size=n)),
            Column.factor("g", ["a", "b", "c", "d"] * 10, ordered=True),
            Column.factor("h", ["u", "v"] * 20),
            Column.boolean("start", [True] + [False] * (n - 1)),
        ])

    def test_missing_column_named(self):
        spec = fm.parse_formula("y ~ s(Freq)")
        with pytest.raises(DataError, match="Freq"):
            fm.validate_against(spec, self._data())

    def test_kind_mismatch(self):
        spec = fm.parse_formula("y ~ s(g)")
        with pytest.raises(DataError, match="numeric"):
            fm.validate_against(spec, self._data())

    def test_ordered_by_factor_marks_difference_mode(self):
        spec = fm.parse_formula("y ~ g + s(x, by=g)")
        bound = fm.validate_against(spec, self._data())
        assert bound.by_modes["s(x,by=g)"] == "difference"
        assert len(bound.levels_of("g")) == 4  # reference + 3 difference smooths

    def test_unordered_by_factor_marks_per_level(self):
        spec = fm.parse_formula("y ~ s(x, by=h)")
        bound = fm.validate_against(spec, self._data())
        assert bound.by_modes["s(x,by=h)"] == "per_level"

    def test_by_factor_needs_two_levels(self):
        data = Dataset.from_columns([
            Column.numeric("y", np.arange(8.0)),
            Column.numeric("x", np.arange(8.0)),
            Column.factor("g", ["only"] * 8),
        ])
        spec = fm.parse_formula("y ~ s(x, by=g)")
        with pytest.raises(DataError, match="levels"):
            fm.validate_against(spec, data)

    def test_pitch_shaped_dataset_binding(self):
        scenario = simlab.pitch_scenario(seed=1, series_length=5)
        data, _ = simlab.generate(scenario)
        spec = fm.parse_formula(
            'Pitch ~ Sex + s(Time) + s(Time, Subject, bs="fs", m=1) + s(Item, Sex, bs="re")'
        )
        bound = fm.validate_against(spec, data)
        assert len(bound.levels_of("Subject")) == 12
        assert len(bound.levels_of("Item")) == 40
