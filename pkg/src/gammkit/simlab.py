"""Synthetic datasets with known ground truth, for oracles and demos.

Two layouts cover the study designs this package targets:

* ``trial_sequence``: one series per subject; every trial presents one item,
  item order permuted per subject.  Think chronometric experiments.
* ``event_grid``: one series per (subject, item) pair sampled on a regular
  0..1 time grid.  Think pitch contours or per-trial EEG traces.

Randomness comes from numpy's seeded PCG64 generators.  Stream splitting is
by purpose and unit so outputs never depend on iteration order:
``default_rng([seed, 0])`` item attributes, ``[seed, 1]`` subject attributes,
``[seed, 2]`` subject curves, ``[seed, 3]`` item curves and intercepts,
``[seed, 4, subject, item]`` the AR(1) noise of one series, and
``[seed, 5, subject, item]`` per-row covariates of one series.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .dataio import Column, Dataset
from .errors import DataError

SHAPES = {
    "zero": lambda x: np.zeros_like(x),
    "linear": lambda x: x - 0.5,
    "sin2pi": lambda x: np.sin(2.0 * np.pi * x),
    "ushape": lambda x: 4.0 * (x - 0.5) ** 2 - 1.0 / 3.0,
    "risefall": lambda x: 0.8 * np.sin(np.pi * x) - 0.6 * x,
}


def _rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def simulate_ar1(n: int, rho: float, sd: float, seed_or_rng) -> np.ndarray:
    """Stationary AR(1) path: e_t = rho * e_{t-1} + innovation, sd(innovation)=sd."""
    if not 0.0 <= rho < 1.0:
        raise DataError(f"rho must lie in [0, 1), got {rho}")
    if sd <= 0.0:
        raise DataError(f"innovation sd must be positive, got {sd}")
    rng = _rng(seed_or_rng)
    e = np.empty(n)
    e[0] = rng.normal(0.0, sd / math.sqrt(1.0 - rho * rho))
    innovations = rng.normal(0.0, sd, n - 1)
    if rho == 0.0:
        e[1:] = innovations
        return e
    from scipy.signal import lfilter

    e[1:] = lfilter([1.0], [1.0, -rho], innovations, zi=np.array([rho * e[0]]))[0]
    return e


def simulate_random_curves(levels, k: int, scale: float, seed_or_rng) -> dict:
    """One natural cubic spline per level, knot values i.i.d. N(0, scale^2) on [0,1]."""
    if k < 3:
        raise DataError(f"need at least 3 knots, got {k}")
    if scale < 0.0:
        raise DataError("curve scale must be nonnegative")
    rng = _rng(seed_or_rng)
    knots = np.linspace(0.0, 1.0, k)
    curves = {}
    for level in levels:
        values = rng.normal(0.0, scale, k) if scale > 0.0 else np.zeros(k)
        curves[level] = CubicSpline(knots, values, bc_type="natural")
    return curves


@dataclass(frozen=True)
class FixedSmooth:
    """A true smooth effect: amplitude * SHAPES[shape](covariate)."""

    covariate: str
    shape: str
    amplitude: float = 1.0
    source: str = "per_item"  # per_item | time | row

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise DataError(f"unknown smooth shape {self.shape!r}")
        if self.source not in ("per_item", "time", "row"):
            raise DataError(f"unknown covariate source {self.source!r}")


@dataclass(frozen=True)
class Scenario:
    name: str
    mode: str  # trial_sequence | event_grid
    n_subjects: int
    n_items: int
    series_length: int
    fixed_smooths: tuple[FixedSmooth, ...] = ()
    subject_curve_scale: float = 0.0
    item_curve_scale: float = 0.0
    item_intercept_sd: float = 0.0
    subject_factor_effect: float = 0.0  # added for the second "Sex" level
    condition_levels: int = 1
    condition_offsets: tuple[float, ...] = ()  # per non-reference level
    curve_basis_dim: int = 8
    ar_rho: float = 0.0
    noise_sd: float = 1.0
    intercept: float = 0.0
    response: str = "y"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("trial_sequence", "event_grid"):
            raise DataError(f"unknown scenario mode {self.mode!r}")
        if self.condition_levels > 1 and len(self.condition_offsets) != self.condition_levels - 1:
            raise DataError("condition_offsets must give one value per non-reference level")
        for bad in (self.subject_curve_scale, self.item_curve_scale,
                    self.item_intercept_sd, self.noise_sd):
            if bad < 0.0:
                raise DataError("scales must be nonnegative")


def scenario_from_dict(obj: dict) -> Scenario:
    """Build a Scenario from a plain JSON-style dict."""
    known = {f.name for f in dataclasses.fields(Scenario)}
    unknown = set(obj) - known
    if unknown:
        raise DataError(f"unknown scenario fields: {sorted(unknown)}")
    try:
        obj = dict(obj)
        obj["fixed_smooths"] = tuple(
            FixedSmooth(**fs) for fs in obj.get("fixed_smooths", ())
        )
        obj["condition_offsets"] = tuple(obj.get("condition_offsets", ()))
        return Scenario(**obj)
    except TypeError as exc:
        raise DataError(f"bad scenario: {exc}") from None


def generate(scenario: Scenario) -> tuple[Dataset, dict]:
    """Generate a dataset plus a ground-truth record.

    The truth record carries per-row arrays: the noiseless signal, the AR(1)
    noise, and each additive component, so the response can be recomputed
    independently.
    """
    if scenario.mode == "trial_sequence":
        return _generate_trials(scenario)
    return _generate_events(scenario)


def _item_values(sc: Scenario):
    rng = np.random.default_rng([sc.seed, 0])
    values = {}
    for fs in sc.fixed_smooths:
        if fs.source == "per_item":
            values[fs.covariate] = rng.uniform(0.0, 1.0, sc.n_items)
    condition = np.arange(sc.n_items) % sc.condition_levels
    return values, condition


def _condition_offset(sc: Scenario, condition_codes: np.ndarray) -> np.ndarray:
    offsets = np.concatenate([[0.0], np.asarray(sc.condition_offsets, dtype=float)])
    return offsets[condition_codes] if sc.condition_levels > 1 else np.zeros(len(condition_codes))


def _series_noise(sc: Scenario, series_keys, length: int) -> np.ndarray:
    if sc.noise_sd == 0.0:
        return np.zeros(len(series_keys) * length)
    return np.concatenate([
        simulate_ar1(length, sc.ar_rho, sc.noise_sd, np.random.default_rng([sc.seed, 4, s, i]))
        for s, i in series_keys
    ])


def _labels(prefix: str, count: int) -> list[str]:
    width = max(2, len(str(count)))
    return [f"{prefix}{i + 1:0{width}d}" for i in range(count)]


def _generate_trials(sc: Scenario) -> tuple[Dataset, dict]:
    S, T = sc.n_subjects, sc.series_length
    if sc.n_items < 1 or S < 1 or T < 2:
        raise DataError("trial scenarios need n_items >= 1, subjects >= 1, series_length >= 2")
    item_vals, item_cond = _item_values(sc)
    rng_subj = np.random.default_rng([sc.seed, 1])
    orders = []
    reps = math.ceil(T / sc.n_items)
    for _ in range(S):
        pool = np.tile(np.arange(sc.n_items), reps)
        orders.append(rng_subj.permutation(pool)[:T])
    curves = simulate_random_curves(
        range(S), sc.curve_basis_dim, sc.subject_curve_scale, np.random.default_rng([sc.seed, 2])
    )
    item_int = np.random.default_rng([sc.seed, 3]).normal(0.0, sc.item_intercept_sd, sc.n_items) \
        if sc.item_intercept_sd > 0 else np.zeros(sc.n_items)

    trial = np.tile(np.arange(1, T + 1, dtype=float), S)
    trial_norm = (trial - 1.0) / (T - 1.0)
    subject_idx = np.repeat(np.arange(S), T)
    item_idx = np.concatenate(orders)
    new_series = np.tile(np.r_[True, np.zeros(T - 1, dtype=bool)], S)

    components: dict[str, np.ndarray] = {}
    covariate_cols: dict[str, np.ndarray] = {}
    signal = np.full(S * T, sc.intercept)
    for fs in sc.fixed_smooths:
        if fs.source == "per_item":
            x = item_vals[fs.covariate][item_idx]
        elif fs.source == "time":
            x = trial_norm
        else:
            raise DataError("trial scenarios support per_item or time covariates")
        covariate_cols[fs.covariate] = x
        contrib = fs.amplitude * SHAPES[fs.shape](x)
        components[f"smooth:{fs.covariate}"] = contrib
        signal += contrib
    cond_part = _condition_offset(sc, item_cond[item_idx])
    if sc.condition_levels > 1:
        components["condition"] = cond_part
        signal += cond_part
    item_part = item_int[item_idx]
    components["item_intercept"] = item_part
    signal += item_part
    subj_part = np.concatenate([curves[s](trial_norm[:T]) for s in range(S)])
    components["subject_curve"] = subj_part
    signal += subj_part

    noise = _series_noise(sc, [(s, 0) for s in range(S)], T)
    y = signal + noise

    subj_labels = _labels("s", S)
    item_labels = _labels("i", sc.n_items)
    cols = [
        Column.numeric(sc.response, y),
        Column.factor("Subject", [subj_labels[i] for i in subject_idx], levels=subj_labels),
        Column.factor("Item", [item_labels[i] for i in item_idx], levels=item_labels),
        Column.numeric("Trial", trial),
    ]
    for name, vals in covariate_cols.items():
        cols.append(Column.numeric(name, vals))
    if sc.condition_levels > 1:
        cond_labels = _labels("c", sc.condition_levels)
        cols.append(
            Column.factor("Condition", [cond_labels[c] for c in item_cond[item_idx]],
                          levels=cond_labels, ordered=True)
        )
    cols.append(Column.boolean("NewTimeSeries", new_series))
    data = Dataset.from_columns(cols)
    truth = {
        "scenario": _scenario_dict(sc),
        "signal": signal,
        "noise": noise,
        "components": components,
    }
    return data, truth


def _generate_events(sc: Scenario) -> tuple[Dataset, dict]:
    S, I, T = sc.n_subjects, sc.n_items, sc.series_length
    if S < 1 or I < 1 or T < 2:
        raise DataError("event scenarios need subjects >= 1, items >= 1, series_length >= 2")
    item_vals, item_cond = _item_values(sc)
    time = np.linspace(0.0, 1.0, T)
    subj_curves = simulate_random_curves(
        range(S), sc.curve_basis_dim, sc.subject_curve_scale, np.random.default_rng([sc.seed, 2])
    )
    rng_items = np.random.default_rng([sc.seed, 3])
    item_curves = simulate_random_curves(range(I), sc.curve_basis_dim, sc.item_curve_scale, rng_items)
    item_int = rng_items.normal(0.0, sc.item_intercept_sd, I) if sc.item_intercept_sd > 0 else np.zeros(I)

    n = S * I * T
    subject_idx = np.repeat(np.arange(S), I * T)
    item_idx = np.tile(np.repeat(np.arange(I), T), S)
    time_col = np.tile(time, S * I)
    new_series = np.tile(np.r_[True, np.zeros(T - 1, dtype=bool)], S * I)
    sex_code = subject_idx % 2  # alternating f/m

    components: dict[str, np.ndarray] = {}
    covariate_cols: dict[str, np.ndarray] = {"Time": time_col}
    signal = np.full(n, sc.intercept)
    for fs in sc.fixed_smooths:
        if fs.source == "per_item":
            x = item_vals[fs.covariate][item_idx]
            covariate_cols[fs.covariate] = x
        elif fs.source == "time":
            x = time_col
        else:  # per-row draws, one substream per series
            x = np.concatenate([
                np.random.default_rng([sc.seed, 5, s, i]).uniform(0.0, 1.0, T)
                for s in range(S) for i in range(I)
            ])
            covariate_cols[fs.covariate] = x
        contrib = fs.amplitude * SHAPES[fs.shape](x)
        components[f"smooth:{fs.covariate}"] = contrib
        signal += contrib
    cond_part = _condition_offset(sc, item_cond[item_idx])
    if sc.condition_levels > 1:
        components["condition"] = cond_part
        signal += cond_part
    sex_part = sc.subject_factor_effect * sex_code
    components["sex"] = sex_part
    signal += sex_part
    subj_part = np.concatenate([subj_curves[s](time) for s in subject_idx[::T]])
    components["subject_curve"] = subj_part
    signal += subj_part
    item_part = np.concatenate([item_curves[i](time) + item_int[i] for i in item_idx[::T]])
    components["item_curve"] = item_part
    signal += item_part

    noise = _series_noise(sc, [(s, i) for s in range(S) for i in range(I)], T)
    y = signal + noise

    subj_labels = _labels("s", S)
    item_labels = _labels("i", I)
    cols = [
        Column.numeric(sc.response, y),
        Column.factor("Subject", [subj_labels[i] for i in subject_idx], levels=subj_labels),
        Column.factor("Item", [item_labels[i] for i in item_idx], levels=item_labels),
        Column.factor("Sex", [("f", "m")[c] for c in sex_code], levels=["f", "m"]),
    ]
    for name, vals in covariate_cols.items():
        cols.append(Column.numeric(name, vals))
    if sc.condition_levels > 1:
        cond_labels = _labels("c", sc.condition_levels)
        cols.append(
            Column.factor("Condition", [cond_labels[c] for c in item_cond[item_idx]],
                          levels=cond_labels, ordered=True)
        )
    cols.append(Column.boolean("NewTimeSeries", new_series))
    data = Dataset.from_columns(cols)
    truth = {
        "scenario": _scenario_dict(sc),
        "signal": signal,
        "noise": noise,
        "components": components,
    }
    return data, truth


def _scenario_dict(sc: Scenario) -> dict:
    d = dataclasses.asdict(sc)
    d["fixed_smooths"] = [dataclasses.asdict(fs) for fs in sc.fixed_smooths]
    d["condition_offsets"] = list(sc.condition_offsets)
    return d


# ---------------------------------------------------------------------------
# canonical scenarios


def naming_scenario(n_subjects=20, n_trials=150, seed=0, **overrides) -> Scenario:
    """Chronometric word-reading design: per-subject drift + mild AR(1) noise."""
    base = dict(
        name="naming",
        mode="trial_sequence",
        n_subjects=n_subjects,
        n_items=n_trials,
        series_length=n_trials,
        fixed_smooths=(FixedSmooth("Frequency", "ushape", 0.8, "per_item"),),
        subject_curve_scale=0.5,
        item_intercept_sd=0.25,
        condition_levels=2,
        condition_offsets=(0.15,),
        ar_rho=0.3,
        noise_sd=0.3,
        intercept=6.5,
        response="RT",
        seed=seed,
    )
    base.update(overrides)
    return Scenario(**base)


def pitch_scenario(n_subjects=12, n_items=40, series_length=100, seed=0, **overrides) -> Scenario:
    """Contour-tracking design: slow AR(1) noise inside each speaker-item event."""
    base = dict(
        name="pitch",
        mode="event_grid",
        n_subjects=n_subjects,
        n_items=n_items,
        series_length=series_length,
        fixed_smooths=(FixedSmooth("Time", "risefall", 3.0, "time"),),
        subject_curve_scale=1.0,
        item_curve_scale=1.0,
        subject_factor_effect=-5.0,
        condition_levels=4,
        condition_offsets=(0.0, 0.0, 0.0),
        ar_rho=0.98,
        noise_sd=0.4,
        intercept=90.0,
        response="Pitch",
        seed=seed,
    )
    base.update(overrides)
    return Scenario(**base)


def sin_scenario(n=500, noise_sd=0.2, seed=0, **overrides) -> Scenario:
    """Single-series sine recovery: y = sin(2 pi x) + iid noise."""
    base = dict(
        name="sin",
        mode="event_grid",
        n_subjects=1,
        n_items=1,
        series_length=n,
        fixed_smooths=(FixedSmooth("x", "sin2pi", 1.0, "row"),),
        ar_rho=0.0,
        noise_sd=noise_sd,
        response="y",
        seed=seed,
    )
    base.update(overrides)
    return Scenario(**base)


def grouped_curves_scenario(
    n_items_per_group=10,
    n_groups=2,
    series_length=50,
    item_curve_scale=0.0,
    group_offsets=None,
    noise_sd=0.5,
    seed=0,
    **overrides,
) -> Scenario:
    """Items split over an ordered condition factor, optional per-item curves."""
    n_items = n_items_per_group * n_groups
    offsets = tuple(group_offsets) if group_offsets is not None else (0.0,) * (n_groups - 1)
    base = dict(
        name="grouped",
        mode="event_grid",
        n_subjects=1,
        n_items=n_items,
        series_length=series_length,
        fixed_smooths=(FixedSmooth("Time", "risefall", 2.0, "time"),),
        item_curve_scale=item_curve_scale,
        condition_levels=n_groups,
        condition_offsets=offsets,
        ar_rho=0.0,
        noise_sd=noise_sd,
        response="y",
        seed=seed,
    )
    base.update(overrides)
    return Scenario(**base)
