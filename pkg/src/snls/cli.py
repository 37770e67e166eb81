"""Command-line front end: run / ensemble / fit.

Recipes are JSON documents mirroring :class:`~snls.experiments.RunConfig`
plus the experiment bookkeeping keys. Unknown keys are rejected; omitted
solver knobs fall back to the built-in defaults, and the fully resolved
configuration is echoed into every manifest so a run can be reproduced
bit-for-bit from its output directory alone.

Exit codes for ``run``: 0 completed, 2 blow-up (a result, not a failure),
1 abort or error — so shell pipelines can tabulate blow-up fractions.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError, FitRefusedError
from .experiments import (
    RunConfig,
    expected_curves,
    fit_a_correction,
    fit_blowup_rate,
    run_ensemble,
    run_trajectory,
    supercritical_rate_check,
)
from .observables import read_series_csv, write_series_csv

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_BLOWUP = 2

RUN_CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)}
EXPERIMENT_KEYS = {"kind", "trials", "out_dir", "amplitudes", "eps_values"}
RECIPE_KINDS = ("single", "ensemble", "rate-fit", "table")


def load_recipe(path) -> dict:
    """Parse and validate a recipe file; unknown keys are an error."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: recipe must be a JSON object")
    unknown = set(raw) - RUN_CONFIG_KEYS - EXPERIMENT_KEYS
    if unknown:
        raise ConfigurationError(f"{path}: unknown recipe keys {sorted(unknown)}")
    kind = raw.get("kind", "single")
    if kind not in RECIPE_KINDS:
        raise ConfigurationError(f"{path}: kind must be one of {RECIPE_KINDS}")
    return raw


def build_run_config(recipe: dict, overrides: dict) -> RunConfig:
    params = {k: v for k, v in recipe.items() if k in RUN_CONFIG_KEYS}
    for key, value in overrides.items():
        if value is not None:
            params[key] = value
    return RunConfig(**params)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_json_ready(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_json_ready(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(out_dir: Path, config: dict, extra: dict) -> Path:
    """Record the resolved config, code version, and artifact hashes."""
    files = {
        p.name: _sha256(p)
        for p in sorted(out_dir.iterdir())
        if p.is_file() and p.name != "manifest.json"
    }
    manifest = {
        "version": __version__,
        "config": config,
        "files": files,
        **extra,
    }
    path = out_dir / "manifest.json"
    _write_json(path, manifest)
    return path


def _outcome_dict(diag) -> dict:
    out = {"status": diag.status}
    if diag.blowup is not None:
        out["blowup"] = {
            "time": diag.blowup.time,
            "center": diag.blowup.center,
            "cause": diag.blowup.cause,
        }
    if diag.aborted is not None:
        out["reason"] = diag.aborted
    out["t_final"] = float(diag.t[-1])
    out["steps"] = int(diag.step[-1])
    out["n_points"] = int(diag.n_points[-1])
    return out


def cmd_run(args) -> int:
    recipe = load_recipe(args.config)
    if recipe.get("kind", "single") not in ("single", "rate-fit"):
        raise ConfigurationError("'run' expects a recipe of kind 'single' or 'rate-fit'")
    cfg = build_run_config(recipe, _config_overrides(args))
    diag = run_trajectory(cfg, trial=args.trial)

    out_dir = _resolve_out_dir(args, recipe)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_series_csv(diag, out_dir / "trajectory.csv")
        extra = {"outcome": _outcome_dict(diag), "kind": recipe.get("kind", "single")}
        if recipe.get("kind") == "rate-fit":
            try:
                fit = fit_blowup_rate(diag.t, diag.scale)
                extra["rate_fit"] = {
                    "t_blowup": fit.t_blowup,
                    "slope": fit.slope,
                    "residual": fit.residual,
                }
            except FitRefusedError as exc:
                extra["rate_fit"] = {"refused": str(exc)}
        write_manifest(out_dir, cfg.as_dict(), extra)

    print(f"status: {diag.status}", end="")
    if diag.blowup is not None:
        print(
            f" (cause={diag.blowup.cause}, t={diag.blowup.time:.6g},"
            f" center={diag.blowup.center:.6g})"
        )
    elif diag.aborted is not None:
        print(f" (reason={diag.aborted})")
    else:
        print(f" (t={diag.t[-1]:.6g})")
    if diag.status == "blowup":
        return EXIT_BLOWUP
    if diag.status == "aborted":
        return EXIT_ERROR
    return EXIT_OK


def _summary_dict(summary) -> dict:
    d = {
        "n_trials": summary.n_trials,
        "blowup_fraction": summary.blowup_fraction,
        "outcomes": [
            {
                "trial": o.trial,
                "status": o.status,
                "t_final": o.t_final,
                "steps": o.steps,
                "n_points": o.n_points,
                "scale_final": o.scale_final,
                "cause": o.cause,
                "blowup_time": o.blowup_time,
                "center": o.center,
            }
            for o in summary.outcomes
        ],
        "curve_times": summary.curve_times,
        "mass_mean": summary.mass_mean,
        "energy_mean": summary.energy_mean,
        "mass_var": summary.mass_var,
        "energy_var": summary.energy_var,
        "alive_count": summary.alive_count,
        "centers": summary.centers,
    }
    if summary.center_stats is not None:
        d["center_stats"] = {
            "mean": summary.center_stats.mean,
            "variance": summary.center_stats.variance,
            "skewness": summary.center_stats.skewness,
            "excess_kurtosis": summary.center_stats.excess_kurtosis,
        }
    try:
        curves = expected_curves(summary)
        d["mass_fit"] = {
            "slope": curves.mass_fit.slope,
            "intercept": curves.mass_fit.intercept,
            "r_squared": curves.mass_fit.r_squared,
        }
        d["energy_fit"] = {
            "slope": curves.energy_fit.slope,
            "intercept": curves.energy_fit.intercept,
            "r_squared": curves.energy_fit.r_squared,
        }
    except FitRefusedError:
        pass
    return d


def _run_one_ensemble(cfg: RunConfig, trials: int, workers: int, out_dir: Path | None):
    keep = out_dir is not None
    summary = run_ensemble(cfg, trials, workers=workers, keep_diagnostics=keep)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        for k, diag in enumerate(summary.diagnostics):
            write_series_csv(diag, out_dir / f"trial_{k:04d}.csv")
        _write_json(out_dir / "summary.json", _summary_dict(summary))
    return summary


def cmd_ensemble(args) -> int:
    recipe = load_recipe(args.config)
    kind = recipe.get("kind", "ensemble")
    if kind not in ("ensemble", "table"):
        raise ConfigurationError("'ensemble' expects a recipe of kind 'ensemble' or 'table'")
    trials = args.trials if args.trials is not None else int(recipe.get("trials", 1))
    workers = _resolve_workers(args)
    out_dir = _resolve_out_dir(args, recipe)

    if kind == "ensemble":
        cfg = build_run_config(recipe, _config_overrides(args))
        summary = _run_one_ensemble(cfg, trials, workers, out_dir)
        if out_dir is not None:
            write_manifest(
                out_dir,
                cfg.as_dict(),
                {"kind": kind, "trials": trials, "blowup_fraction": summary.blowup_fraction},
            )
        print(f"blowup fraction: {summary.blowup_fraction:.4f} over {trials} trials")
        return EXIT_OK

    amplitudes = recipe.get("amplitudes")
    eps_values = recipe.get("eps_values")
    if not amplitudes or not eps_values:
        raise ConfigurationError("a table recipe needs 'amplitudes' and 'eps_values'")
    table = []
    for eps in eps_values:
        row = []
        for amp in amplitudes:
            cell = build_run_config(
                recipe, {**_config_overrides(args), "amplitude": amp, "eps": eps}
            )
            cell_dir = out_dir / f"A{amp:g}_eps{eps:g}" if out_dir is not None else None
            summary = _run_one_ensemble(cell, trials, workers, cell_dir)
            row.append(summary.blowup_fraction)
            print(f"A={amp:g} eps={eps:g}: fraction {summary.blowup_fraction:.4f}")
        table.append(row)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(
            out_dir / "table.json",
            {"amplitudes": amplitudes, "eps_values": eps_values, "fractions": table},
        )
        base = build_run_config(recipe, _config_overrides(args))
        write_manifest(out_dir, base.as_dict(), {"kind": kind, "trials": trials})
    return EXIT_OK


def cmd_fit(args) -> int:
    series = read_series_csv(args.input)
    if args.kind == "rate":
        _require_columns(series, ("t", "L"), args.input)
        fit = fit_blowup_rate(series["t"], series["L"])
        payload = {
            "kind": "rate",
            "t_blowup": fit.t_blowup,
            "slope": fit.slope,
            "residual": fit.residual,
        }
    elif args.kind == "a-correction":
        _require_columns(series, ("tau", "a"), args.input)
        fit = fit_a_correction(series["tau"], series["a"])
        payload = {"kind": "a-correction", "intercept": fit.intercept, "slope": fit.slope}
    else:
        _require_columns(series, ("t", "L", "sup_norm", "tau", "a"), args.input)
        rate = fit_blowup_rate(series["t"], series["L"])
        corr = fit_a_correction(series["tau"], series["a"])
        r = supercritical_rate_check(
            series["t"], series["sup_norm"], corr.intercept, rate.t_blowup, args.sigma
        )
        finite = r[np.isfinite(r)]
        payload = {
            "kind": "supercritical",
            "t_blowup": rate.t_blowup,
            "slope": rate.slope,
            "a_limit": corr.intercept,
            "r_final": float(finite[-1]) if finite.size else None,
        }
    text = json.dumps(_json_ready(payload), indent=2, sort_keys=True)
    print(text)
    if args.out is not None:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "fit.json", "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def _require_columns(series: dict, names, path) -> None:
    missing = [n for n in names if n not in series]
    if missing:
        raise ConfigurationError(f"{path}: missing CSV columns {missing}")


def _config_overrides(args) -> dict:
    return {
        "seed": args.seed,
        "stride": args.stride,
        "scheme": args.scheme,
        "noise": args.noise,
        "eps": args.eps,
    }


def _resolve_out_dir(args, recipe: dict) -> Path | None:
    if args.out is not None:
        return Path(args.out)
    if recipe.get("out_dir"):
        return Path(recipe["out_dir"])
    return None


def _resolve_workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    env = os.environ.get("SNLS_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigurationError(f"SNLS_WORKERS={env!r} is not an integer") from exc
    return 1


def _add_common_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="recipe JSON path")
    p.add_argument("--seed", type=int, default=None, help="override the recipe seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--stride", type=int, default=None, help="record every K steps")
    p.add_argument("--scheme", choices=["mec", "cn", "le"], default=None)
    p.add_argument("--noise", choices=["det", "add", "mult"], default=None)
    p.add_argument("--eps", type=float, default=None, help="noise strength")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snls",
        description="Stochastic focusing NLS simulations with conservative refinement",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a single trajectory")
    _add_common_run_flags(p_run)
    p_run.add_argument("--trial", type=int, default=0, help="noise stream trial index")
    p_run.set_defaults(func=cmd_run)

    p_ens = sub.add_parser("ensemble", help="run a Monte Carlo ensemble")
    _add_common_run_flags(p_ens)
    p_ens.add_argument("--trials", type=int, default=None, help="number of trials")
    p_ens.add_argument(
        "--workers",
        type=int,
        default=None,
        help="worker processes (SNLS_WORKERS as fallback); never changes results",
    )
    p_ens.set_defaults(func=cmd_ensemble)

    p_fit = sub.add_parser("fit", help="fit blow-up diagnostics from a series CSV")
    p_fit.add_argument("--in", dest="input", required=True, help="diagnostics CSV")
    p_fit.add_argument(
        "--kind", choices=["rate", "a-correction", "supercritical"], required=True
    )
    p_fit.add_argument("--sigma", type=int, default=2, help="nonlinearity exponent")
    p_fit.add_argument("--out", default=None, help="directory for fit.json")
    p_fit.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, FitRefusedError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
