"""Summaries, partial effects, difference curves, surfaces, comparison."""

import numpy as np
import pytest
from scipy import stats

import gammkit as gk
from gammkit import inference, simlab
from gammkit.dataio import Column, Dataset
from gammkit.errors import DataError


def _sin_model(n=400, seed=1, **kw):
    data, truth = simlab.generate(simlab.sin_scenario(n=n, seed=seed, **kw))
    return gk.gamm("y ~ s(x)", data), data, truth


class TestSummarize:
    def test_parametric_matches_ols(self):
        rng = np.random.default_rng(0)
        n = 120
        x = rng.uniform(size=n)
        g = rng.integers(0, 2, n)
        y = 1.0 + 0.5 * x - 0.3 * g + rng.normal(0, 0.4, n)
        data = Dataset.from_columns([
            Column.numeric("y", y),
            Column.numeric("x", x),
            Column.factor("g", ["a" if v == 0 else "b" for v in g], levels=["a", "b"]),
        ])
        model = gk.gamm("y ~ x + g", data)
        table = gk.summarize(model)

        X = np.column_stack([np.ones(n), x, (g == 1).astype(float)])
        beta = np.linalg.lstsq(X, y, rcond=None)[0]
        resid = y - X @ beta
        sigma2 = resid @ resid / (n - 3)
        cov = sigma2 * np.linalg.inv(X.T @ X)
        order = {"Intercept": 0, "x": 1, "g=b": 2}
        for name, est, se, t, p in table.parametric_rows:
            j = order[name]
            assert abs(est - beta[j]) < 1e-10
            assert abs(se - np.sqrt(cov[j, j])) < 1e-10
            t_ref = beta[j] / np.sqrt(cov[j, j])
            assert abs(t - t_ref) < 1e-10
            assert abs(p - 2 * stats.t.sf(abs(t_ref), n - 3)) < 1e-10

    def test_smooth_rows_layout(self):
        model, _, _ = _sin_model()
        table = gk.summarize(model)
        assert len(table.smooth_rows) == 1
        label, edf, ref_df, fval, p = table.smooth_rows[0]
        assert label == "s(x)"
        assert ref_df == 9.0  # span width
        assert 0.0 <= p <= 1.0
        assert table.n == 400

    def test_text_two_panel_layout(self):
        model, _, _ = _sin_model()
        text = gk.summarize(model).text()
        assert text.index("A. parametric coefficients") < text.index("B. smooth terms")
        assert "adjusted R-sq" in text
        assert text.endswith("\n")

    def test_pure_function_of_fit(self):
        model, _, _ = _sin_model()
        assert gk.summarize(model).text() == gk.summarize(model).text()


class TestEvaluateSmooth:
    def test_matches_fitted_contribution_at_observed_points(self):
        model, data, _ = _sin_model(n=200, seed=2)
        x = data["x"].values
        curve = gk.evaluate_smooth(model, "s(x)", x)
        block = model.design.block("s(x)")
        a, z = block.span
        contribution = model.design.X[:, a:z] @ model.beta[a:z]
        np.testing.assert_allclose(curve.fit, contribution, atol=1e-10)

    def test_reversed_grid_reverses_curve(self):
        model, _, _ = _sin_model(n=150, seed=3)
        g = np.linspace(0.05, 0.95, 33)
        a = gk.evaluate_smooth(model, "s(x)", g)
        b = gk.evaluate_smooth(model, "s(x)", g[::-1])
        np.testing.assert_allclose(a.fit, b.fit[::-1], atol=1e-12)
        np.testing.assert_allclose(a.se, b.se[::-1], atol=1e-12)

    def test_sin_recovery_within_bands(self):
        model, data, _ = _sin_model(n=800, seed=4)
        g = np.linspace(0.02, 0.98, 100)
        curve = gk.evaluate_smooth(model, "s(x)", g)
        truth = np.sin(2 * np.pi * g)
        truth = truth - truth.mean() + curve.fit.mean()  # align centering
        ok = np.abs(curve.fit - truth) < 3.0 * curve.se.max()
        assert ok.mean() >= 0.95

    def test_extrapolation_rejected_unless_allowed(self):
        model, _, _ = _sin_model(n=150, seed=5)
        with pytest.raises(DataError, match="range"):
            gk.evaluate_smooth(model, "s(x)", np.array([-0.5, 0.5]))
        curve = gk.evaluate_smooth(model, "s(x)", np.array([-0.05, 0.5]), allow_extrapolation=True)
        assert np.isfinite(curve.fit).all()

    def test_unknown_label(self):
        model, _, _ = _sin_model(n=150, seed=6)
        with pytest.raises(DataError, match="s\\(zzz\\)"):
            gk.evaluate_smooth(model, "s(zzz)", np.array([0.5]))

    def test_se_shrinks_with_n(self):
        med = []
        for n in (200, 800, 3200):
            model, _, _ = _sin_model(n=n, seed=7)
            g = np.linspace(0.05, 0.95, 60)
            med.append(np.median(gk.evaluate_smooth(model, "s(x)", g).se))
        assert med[0] > med[1] > med[2]


class TestDifference:
    def _model(self, offsets, seed=0, **kw):
        sc = simlab.grouped_curves_scenario(seed=seed, group_offsets=offsets, **kw)
        data, _ = simlab.generate(sc)
        return gk.gamm("y ~ Condition + s(Time) + s(Time, by=Condition)", data)

    def test_reference_level_flagged_zero(self):
        model = self._model([0.0])
        curve = gk.evaluate_difference(model, "s(Time,by=Condition)", "c01", np.linspace(0, 1, 20))
        assert curve.is_reference
        assert np.all(curve.fit == 0.0)
        assert np.all(curve.se == 0.0)

    def test_identical_groups_contain_zero(self):
        vals = [
            self._model([0.0], seed=s).pipe_containment
            if False
            else gk.evaluate_difference(
                self._model([0.0], seed=s), "s(Time,by=Condition)", "c02", np.linspace(0, 1, 50)
            ).zero_containment
            for s in range(3)
        ]
        assert np.mean(vals) >= 0.90

    def test_offset_groups_exclude_zero(self):
        curve = gk.evaluate_difference(
            self._model([1.0], seed=1), "s(Time,by=Condition)", "c02", np.linspace(0, 1, 50)
        )
        assert curve.zero_containment <= 0.10

    def test_unknown_level(self):
        model = self._model([0.0])
        with pytest.raises(DataError, match="level"):
            gk.evaluate_difference(model, "s(Time,by=Condition)", "c99", np.linspace(0, 1, 5))


class TestSurface:
    def _tensor_model(self, y_fn, n=500, seed=8, noise=0.2):
        rng = np.random.default_rng(seed)
        x, z = rng.uniform(size=n), rng.uniform(size=n)
        y = y_fn(x, z) + rng.normal(0, noise, n)
        data = Dataset.from_columns([
            Column.numeric("y", y), Column.numeric("x", x), Column.numeric("z", z),
        ])
        return gk.gamm("y ~ te(x, z, k=5)", data)

    def test_constant_response_flat_surface(self):
        model = self._tensor_model(lambda x, z: 0.0 * x, noise=1e-8)
        g = np.linspace(0.1, 0.9, 7)
        surf = gk.evaluate_surface(model, "te(x,z)", g, g)
        assert np.abs(surf.fit).max() < 1e-6

    def test_additive_truth_recovered_in_interior(self):
        f1 = lambda x: np.sin(2 * np.pi * x)
        f2 = lambda z: 4 * (z - 0.5) ** 2
        model = self._tensor_model(lambda x, z: f1(x) + f2(z), n=900, seed=9)
        g = np.linspace(0.1, 0.9, 9)
        surf = gk.evaluate_surface(model, "te(x,z)", g, g)
        truth = f1(g)[:, None] + f2(g)[None, :]
        truth = truth - truth.mean() + surf.fit.mean()
        inside = np.abs(surf.fit - truth) < 2.5 * surf.se + 0.1
        assert inside.mean() >= 0.8

    def test_symmetric_data_symmetric_surface(self):
        rng = np.random.default_rng(10)
        n = 300
        x, z = rng.uniform(size=n), rng.uniform(size=n)
        y = np.sin(2 * np.pi * x) + np.sin(2 * np.pi * z) + rng.normal(0, 0.2, n)
        data = Dataset.from_columns([
            Column.numeric("y", np.r_[y, y]),
            Column.numeric("x", np.r_[x, z]),
            Column.numeric("z", np.r_[z, x]),
        ])
        model = gk.gamm("y ~ te(x, z, k=4)", data)
        g = np.linspace(0.1, 0.9, 8)
        surf = gk.evaluate_surface(model, "te(x,z)", g, g)
        np.testing.assert_allclose(surf.fit, surf.fit.T, atol=0.05)

    def test_long_format(self):
        model = self._tensor_model(lambda x, z: x * z, n=300, seed=11)
        surf = gk.evaluate_surface(model, "te(x,z)", np.linspace(0.2, 0.8, 3), np.linspace(0.2, 0.8, 4))
        rows = surf.to_long()
        assert len(rows) == 12
        assert all(len(r) == 4 for r in rows)


class TestRandomEffects:
    def _pitch_model(self, seed=0):
        sc = simlab.pitch_scenario(n_subjects=4, n_items=8, series_length=20, seed=seed,
                                   ar_rho=0.3, subject_curve_scale=0.5, item_curve_scale=0.5)
        data, _ = simlab.generate(sc)
        return gk.gamm(
            'Pitch ~ Sex + s(Time) + s(Time, Subject, bs="fs", m=1) + s(Item, Sex, bs="re")',
            data, rho=0.3, ar_start_column="NewTimeSeries",
        )

    def test_interaction_row_count(self):
        table = gk.random_effect_coefs(self._pitch_model(), "re(Item,Sex)")
        assert len(table.keys) == 16  # 8 items x 2 sexes
        assert all(len(k) == 2 for k in table.keys)
        assert np.all(table.sds > 0)

    def test_correlation_mechanics(self):
        keys = [(f"i{k}", s) for k in range(40) for s in ("f", "m")]
        coefs = np.arange(80, dtype=float)
        table = inference.RandomEffectTable("re(a,b)", ("item", "sex"), keys, coefs, np.ones(80))
        r, t, df, p = gk.coef_correlation(table, "sex")
        assert df == 38
        assert abs(r - 1.0) < 1e-12  # paired values shift by exactly one unit

    def test_antisymmetric_pairs(self):
        rng = np.random.default_rng(12)
        vals = rng.normal(size=40)
        keys, coefs = [], []
        for k, v in enumerate(vals):
            keys += [(f"i{k}", "f"), (f"i{k}", "m")]
            coefs += [v, -v]
        table = inference.RandomEffectTable("re(a,b)", ("item", "sex"), keys, np.array(coefs), np.ones(80))
        r, _, df, _ = gk.coef_correlation(table, "sex")
        assert r < -0.999
        assert df == 38

    def test_too_few_pairs(self):
        keys = [("i0", "f"), ("i0", "m"), ("i1", "f"), ("i1", "m")]
        table = inference.RandomEffectTable("re(a,b)", ("item", "sex"), keys, np.arange(4.0), np.ones(4))
        with pytest.raises(DataError, match="pairs"):
            gk.coef_correlation(table, "sex")


class TestCompare:
    def test_self_comparison_zero_deltas(self):
        model, _, _ = _sin_model(n=200, seed=13)
        table = gk.compare([model, model])
        assert table.rows[1].delta_reml == 0.0
        assert table.rows[1].delta_aic == 0.0
        assert table.rows[1].comparable

    def test_differing_rows_rejected(self):
        a, _, _ = _sin_model(n=200, seed=14)
        b, _, _ = _sin_model(n=150, seed=14)
        with pytest.raises(DataError, match="rows"):
            gk.compare([a, b])

    def test_differing_rho_flagged(self):
        data, _ = simlab.generate(simlab.sin_scenario(n=200, seed=15, ar_rho=0.4))
        a = gk.gamm("y ~ s(x)", data)
        b = gk.gamm("y ~ s(x)", data, rho=0.4, ar_start_column="NewTimeSeries")
        table = gk.compare([a, b])
        assert not table.rows[1].comparable


class TestInvariants:
    def test_term_contributions_sum_to_fitted(self):
        sc = simlab.pitch_scenario(n_subjects=3, n_items=5, series_length=15, seed=16, ar_rho=0.2)
        data, _ = simlab.generate(sc)
        model = gk.gamm(
            'Pitch ~ Sex + s(Time) + s(Time, Subject, bs="fs", m=1) + s(Item, bs="re")',
            data, rho=0.2, ar_start_column="NewTimeSeries",
        )
        a, z = model.design.parametric_span
        total = model.design.X[:, a:z] @ model.beta[a:z]
        for block in model.design.blocks:
            ba, bz = block.span
            total = total + model.design.X[:, ba:bz] @ model.beta[ba:bz]
        np.testing.assert_allclose(total, model.fitted, atol=1e-10)

    def test_whitening_widens_parametric_se_under_ar_noise(self):
        # slow within-series covariate + AR noise: more whitening, wider se
        rng = np.random.default_rng(17)
        n_series, length = 12, 80
        rows = n_series * length
        z = np.tile(np.linspace(0, 1, length), n_series)
        y = 0.5 * z + np.concatenate([
            simlab.simulate_ar1(length, 0.6, 0.4, seed_or_rng=int(s)) for s in range(n_series)
        ])
        data = Dataset.from_columns([
            Column.numeric("y", y),
            Column.numeric("z", z),
            Column.boolean("NewTimeSeries", np.tile(np.r_[True, np.zeros(length - 1, bool)], n_series)),
        ])
        ses = []
        for rho in (0.0, 0.3, 0.6):
            model = gk.gamm("y ~ z", data, rho=rho, ar_start_column="NewTimeSeries")
            table = gk.summarize(model)
            ses.append(dict((r[0], r[2]) for r in table.parametric_rows)["z"])
        assert ses[1] >= 0.95 * ses[0]
        assert ses[2] >= 0.95 * ses[1]
        assert ses[2] > ses[0]
