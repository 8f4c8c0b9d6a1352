"""Command-line workflow: simulate, fit, summarize, diagnose, sweep rho.

Exit codes: 0 success, 2 user/data error, 3 numerical failure.  Heavy
imports happen inside commands so GAMMKIT_THREADS can cap BLAS threads
before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _apply_thread_cap():
    cap = os.environ.get("GAMMKIT_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gammkit",
        description="Gaussian additive mixed models with AR(1) residual whitening",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model and write summary/diagnostic artifacts")
    fit.add_argument("--config", help="JSON file with any of the flags below")
    fit.add_argument("--data", help="input CSV")
    fit.add_argument("--formula", help="model formula text")
    fit.add_argument("--rho", type=float, default=None, help="AR(1) coefficient in [0,1)")
    fit.add_argument("--ar-start", default=None, help="boolean series-start column")
    fit.add_argument("--out", help="output directory")
    fit.add_argument("--grid", type=int, default=None, help="curve grid resolution (default 100)")
    fit.add_argument("--max-lag", type=int, default=None, help="ACF max lag (default 25)")
    fit.add_argument("--schema", default=None, help="JSON schema-override file")
    fit.add_argument("--emit", default=None,
                     help="comma list from summary,residuals,curves,surfaces,acf,recoefs")

    acf_cmd = sub.add_parser("acf", help="per-series and pooled ACFs of a value column")
    acf_cmd.add_argument("--data", required=True, help="input CSV")
    acf_cmd.add_argument("--column", required=True, help="numeric column to analyze")
    acf_cmd.add_argument("--ar-start", default=None, help="boolean series-start column")
    acf_cmd.add_argument("--max-lag", type=int, default=25)
    acf_cmd.add_argument("--out", required=True, help="output directory")
    acf_cmd.add_argument("--top", type=int, default=0, help="also list the K most autocorrelated series")

    sweep = sub.add_parser("rho-sweep", help="refit over candidate rho values and recommend one")
    sweep.add_argument("--data", required=True)
    sweep.add_argument("--formula", required=True)
    sweep.add_argument("--ar-start", required=True)
    sweep.add_argument("--candidates", required=True, help="comma list, e.g. 0,0.3,0.6")
    sweep.add_argument("--max-lag", type=int, default=10)
    sweep.add_argument("--schema", default=None)
    sweep.add_argument("--out", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset plus ground truth")
    sim.add_argument("--scenario", required=True, help="scenario JSON file")
    sim.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sim.add_argument("--out", required=True)
    return parser


def _load_config(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise ValueError("config file must hold a JSON object")
    merged = dict(cfg)
    for key in ("data", "formula", "rho", "ar_start", "out", "grid", "max_lag", "schema", "emit"):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    merged.setdefault("rho", 0.0)
    merged.setdefault("grid", 100)
    merged.setdefault("max_lag", 25)
    merged.setdefault("emit", "summary,residuals,curves,surfaces,acf,recoefs")
    for required in ("data", "formula", "out"):
        if not merged.get(required):
            raise ValueError(f"missing required option --{required.replace('_', '-')}")
    return merged


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


def _csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _fnum(v) -> str:
    return repr(float(v))


def _safe_name(label: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in label).strip("_")


def _fit_model(cfg):
    from . import dataio, engine, formula

    schema = dataio.load_schema(cfg["schema"]) if cfg.get("schema") else None
    data = dataio.load_csv(cfg["data"], schema)
    spec = formula.parse_formula(cfg["formula"]).with_options(
        rho=float(cfg.get("rho", 0.0)), ar_start_column=cfg.get("ar_start")
    )
    bound = formula.validate_against(spec, data)
    return data, bound, engine.fit(bound, data)


def cmd_fit(args) -> int:
    from . import diagnostics, formula as formula_mod, inference

    cfg = _load_config(args)
    out = Path(cfg["out"])
    emit = {item.strip() for item in str(cfg["emit"]).split(",") if item.strip()}
    _, _, model = _fit_model(cfg)
    table = inference.summarize(model)

    if "summary" in emit:
        _write(out / "summary.txt", table.text())
        _write(out / "summary.json", json.dumps(table.to_dict(), indent=2, sort_keys=True))
    if "residuals" in emit:
        rows = [
            (str(i), _fnum(f), _fnum(rr), _fnum(rw))
            for i, (f, rr, rw) in enumerate(
                zip(model.fitted, model.residuals_raw, model.residuals_whitened)
            )
        ]
        _write(out / "residuals.csv", _csv_text(["row", "fitted", "residual_raw", "residual_whitened"], rows))

    grid_n = int(cfg["grid"])
    if grid_n < 2:
        raise ValueError("grid resolution must be >= 2")
    for block in model.design.blocks:
        lo_hi = block.cov_ranges.get(block.covariates[0]) if block.covariates else None
        if block.kind == formula_mod.TPRS and "curves" in emit:
            grid = _linspace(lo_hi, grid_n)
            curve = inference.evaluate_smooth(model, block.label, grid)
            _write_curve(out / "curves" / f"{_safe_name(block.label)}.csv", curve)
        elif block.kind == formula_mod.FACTOR_SMOOTH and "curves" in emit:
            grid = _linspace(lo_hi, grid_n)
            rows = []
            for level in block.evaluator.levels:
                curve = inference.evaluate_smooth(model, block.label, grid, level=level)
                lo, hi = curve.bands()
                rows += [
                    (level, _fnum(g), _fnum(f), _fnum(s), _fnum(l), _fnum(h))
                    for g, f, s, l, h in zip(grid, curve.fit, curve.se, lo, hi)
                ]
            _write(out / "curves" / f"{_safe_name(block.label)}.csv",
                   _csv_text(["level", "grid", "fit", "se", "lower95", "upper95"], rows))
        elif block.kind == formula_mod.TENSOR and "surfaces" in emit and len(block.covariates) == 2:
            gx = _linspace(block.cov_ranges[block.covariates[0]], grid_n)
            gz = _linspace(block.cov_ranges[block.covariates[1]], grid_n)
            surf = inference.evaluate_surface(model, block.label, gx, gz)
            rows = [
                (_fnum(x), _fnum(z), _fnum(f), _fnum(s), _fnum(f - 1.96 * s), _fnum(f + 1.96 * s))
                for x, z, f, s in surf.to_long()
            ]
            _write(out / "surfaces" / f"{_safe_name(block.label)}.csv",
                   _csv_text([block.covariates[0], block.covariates[1], "fit", "se", "lower95", "upper95"], rows))
        elif block.kind == formula_mod.RANDOM_EFFECT and "recoefs" in emit:
            tab = inference.random_effect_coefs(model, block.label)
            key_names = [f"level{i + 1}" for i in range(len(tab.keys[0]))]
            rows = [key + (_fnum(c), _fnum(s)) for key, c, s in tab.rows()]
            _write(out / "recoefs" / f"{_safe_name(block.label)}.csv",
                   _csv_text(key_names + ["coef", "sd"], rows))

    if "acf" in emit:
        max_lag = _usable_lag(model.series, int(cfg["max_lag"]))
        result = diagnostics.acf_by_series(model.residuals_whitened, model.series, max_lag)
        _write(out / "acf.csv", _acf_csv(result.per_series + [result.pooled]))
    return 0


def _linspace(lo_hi, n):
    import numpy as np

    lo, hi = lo_hi
    return np.linspace(lo, hi, n)


def _usable_lag(series, requested: int) -> int:
    longest = max(series.series_lengths)
    return max(1, min(requested, longest - 1))


def _write_curve(path: Path, curve):
    lo, hi = curve.bands()
    rows = [
        (_fnum(g), _fnum(f), _fnum(s), _fnum(l), _fnum(h))
        for g, f, s, l, h in zip(curve.grid, curve.fit, curve.se, lo, hi)
    ]
    _write(path, _csv_text(["grid", "fit", "se", "lower95", "upper95"], rows))


def _acf_csv(results) -> str:
    rows = []
    for res in results:
        for lag in range(len(res.acf)):
            rows.append(
                (res.series, str(lag), _fnum(res.acf[lag]), _fnum(res.ci_bound),
                 "true" if res.significant[lag] else "false")
            )
    return _csv_text(["series", "lag", "acf", "ci", "significant"], rows)


def cmd_acf(args) -> int:
    from . import dataio, diagnostics

    data = dataio.load_csv(args.data)
    col = data[args.column]
    if col.kind != dataio.NUMERIC:
        raise ValueError(f"column {args.column!r} is not numeric")
    if args.ar_start:
        series = dataio.build_series_index(data, args.ar_start)
    else:
        series = dataio.SeriesIndex.single(data.n_rows)
    max_lag = _usable_lag(series, args.max_lag)
    result = diagnostics.acf_by_series(col.values, series, max_lag)
    out = Path(args.out)
    _write(out / "acf.csv", _acf_csv(result.per_series + [result.pooled]))
    if args.top > 0:
        ranked = sorted(
            result.per_series,
            key=lambda r: (-float(abs(r.acf[1:]).max()), int(r.series)),
        )[: args.top]
        rows = [
            (r.series, _fnum(float(abs(r.acf[1:]).max())), str(r.n_significant()))
            for r in ranked
        ]
        _write(out / "top_series.csv", _csv_text(["series", "max_abs_acf", "n_significant"], rows))
    return 0


def cmd_rho_sweep(args) -> int:
    from . import dataio, diagnostics, formula

    schema = dataio.load_schema(args.schema) if args.schema else None
    data = dataio.load_csv(args.data, schema)
    try:
        candidates = [float(c) for c in args.candidates.split(",") if c.strip() != ""]
    except ValueError:
        raise ValueError(f"bad candidate list {args.candidates!r}") from None
    spec = formula.parse_formula(args.formula).with_options(
        rho=candidates[0] if candidates else 0.0, ar_start_column=args.ar_start
    )
    bound = formula.validate_against(spec, data)
    report = diagnostics.rho_sweep(bound, data, candidates, max_lag=args.max_lag)
    _write(Path(args.out) / "rho_report.json", json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_simulate(args) -> int:
    from . import dataio, simlab

    with open(args.scenario, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"scenario file {args.scenario}: {exc}") from None
    if args.seed is not None:
        obj["seed"] = args.seed
    scenario = simlab.scenario_from_dict(obj)
    data, truth = simlab.generate(scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_csv(data, out / "data.csv")
    payload = {
        "scenario": truth["scenario"],
        "signal": [float(v) for v in truth["signal"]],
        "noise": [float(v) for v in truth["noise"]],
        "components": {k: [float(v) for v in arr] for k, arr in truth["components"].items()},
    }
    _write(out / "truth.json", json.dumps(payload, sort_keys=True))
    return 0


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .errors import DataError, FitError

    handlers = {
        "fit": cmd_fit,
        "acf": cmd_acf,
        "rho-sweep": cmd_rho_sweep,
        "simulate": cmd_simulate,
    }
    try:
        return handlers[args.command](args)
    except (DataError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"gammkit: error: {exc}", file=sys.stderr)
        return 2
    except FitError as exc:
        print(f"gammkit: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
