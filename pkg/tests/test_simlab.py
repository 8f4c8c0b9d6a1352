"""Generators: AR(1) paths, random curves, full scenarios."""

import numpy as np
import pytest

from gammkit import diagnostics, simlab
from gammkit.errors import DataError


class TestSimulateAr1:
    def test_white_noise_limit(self):
        e = simlab.simulate_ar1(100_000, 0.0, 1.5, seed_or_rng=1)
        assert abs(e.std() - 1.5) / 1.5 < 0.03

    def test_stationary_variance(self):
        e = simlab.simulate_ar1(100_000, 0.6, 1.0, seed_or_rng=2)
        target = 1.0 / (1.0 - 0.36)
        assert abs(e.var() - target) / target < 0.03

    def test_acf_matches_rho_powers(self):
        e = simlab.simulate_ar1(100_000, 0.6, 1.0, seed_or_rng=3)
        r = diagnostics.acf(e, 3)
        for lag in (1, 2, 3):
            assert abs(r.acf[lag] - 0.6**lag) < 0.02

    def test_rho_bounds(self):
        with pytest.raises(DataError):
            simlab.simulate_ar1(10, 1.0, 1.0, seed_or_rng=0)

    def test_deterministic(self):
        a = simlab.simulate_ar1(1000, 0.4, 1.0, seed_or_rng=9)
        b = simlab.simulate_ar1(1000, 0.4, 1.0, seed_or_rng=9)
        assert np.array_equal(a, b)


class TestRandomCurves:
    def test_zero_scale_gives_zero_curves(self):
        curves = simlab.simulate_random_curves(range(5), 6, 0.0, seed_or_rng=1)
        t = np.linspace(0, 1, 50)
        for f in curves.values():
            assert np.abs(f(t)).max() == 0.0

    def test_spread_grows_with_scale(self):
        t = np.linspace(0, 1, 200)
        sds = []
        for scale in (0.1, 0.5, 1.0):
            curves = simlab.simulate_random_curves(range(40), 6, scale, seed_or_rng=2)
            values = np.array([f(t) for f in curves.values()])
            sds.append(values.std())
        assert sds[0] < sds[1] < sds[2]

    def test_same_seed_same_curves(self):
        t = np.linspace(0, 1, 20)
        a = simlab.simulate_random_curves(range(3), 5, 1.0, seed_or_rng=7)
        b = simlab.simulate_random_curves(range(3), 5, 1.0, seed_or_rng=7)
        for key in a:
            assert np.array_equal(a[key](t), b[key](t))


class TestGenerate:
    def test_naming_scenario_shape(self):
        data, truth = simlab.generate(simlab.naming_scenario(seed=0))
        assert data.n_rows == 20 * 150
        assert data["Subject"].levels == [f"s{i:02d}" for i in range(1, 21)]
        assert "Frequency" in data
        assert data["NewTimeSeries"].values.sum() == 20

    def test_pitch_scenario_shape(self):
        data, truth = simlab.generate(simlab.pitch_scenario(seed=0))
        assert data.n_rows == 12 * 40 * 100
        assert data["NewTimeSeries"].values.sum() == 480

    def test_zero_noise_zero_random_is_exact(self):
        sc = simlab.sin_scenario(n=80, noise_sd=0.0, seed=3)
        data, truth = simlab.generate(sc)
        assert np.array_equal(data["y"].values, truth["signal"])

    def test_truth_recomputes_response(self):
        data, truth = simlab.generate(simlab.naming_scenario(n_subjects=4, n_trials=30, seed=5))
        np.testing.assert_allclose(
            data["RT"].values, truth["signal"] + truth["noise"], atol=1e-12
        )
        total = np.full(data.n_rows, truth["scenario"]["intercept"])
        for part in truth["components"].values():
            total = total + part
        np.testing.assert_allclose(truth["signal"], total, atol=1e-12)

    def test_bit_reproducible(self):
        a, ta = simlab.generate(simlab.pitch_scenario(n_subjects=3, n_items=4, series_length=10, seed=11))
        b, tb = simlab.generate(simlab.pitch_scenario(n_subjects=3, n_items=4, series_length=10, seed=11))
        assert np.array_equal(a["Pitch"].values, b["Pitch"].values)
        assert np.array_equal(ta["signal"], tb["signal"])

    def test_scenario_from_dict_round_trip(self):
        sc = simlab.naming_scenario(n_subjects=3, n_trials=20, seed=2)
        again = simlab.scenario_from_dict(simlab._scenario_dict(sc))
        assert again == sc

    def test_scenario_from_dict_rejects_unknown(self):
        with pytest.raises(DataError, match="unknown scenario fields"):
            simlab.scenario_from_dict({"name": "x", "bogus": 1})
