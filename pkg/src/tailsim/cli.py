"""Command-line runner: ``tailsim fit | sim <scenario> | sweep <scenario>``.

Exit codes: 0 success, 2 unreadable input, 3 invalid config, 4 a runtime
invariant failed. Only the manifest path goes to stdout.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import ExperimentConfig, ParseError, load_json, materialize, sweep_children, validate
from .simcore import ConfigurationError

EXIT_PARSE, EXIT_VALIDATION, EXIT_INVARIANT = 2, 3, 4


class InvariantViolation(RuntimeError):
    """A scenario produced output that breaks one of its guarantees."""


def _check(condition: bool, name: str) -> None:
    if not condition:
        raise InvariantViolation(name)


# ----------------------------------------------------------------------------- scenario runners

def _run_mec(cfg, extras) -> List[Dict[str, Any]]:
    from .extreme_mec import simulate, tail_report

    rows = []
    for scheme in extras["schemes"]:
        res = simulate(dataclasses.replace(cfg, scheme=scheme))
        hist = res.pooled_history
        _check(bool(np.all(hist >= 0)), "queue backlogs stay non-negative")
        vq = [(v.v_prob, v.v_mean, v.v_m2) for v in res.virtual]
        _check(all(math.isfinite(x) and x >= 0 for t in vq for x in t), "virtual queues stay finite and non-negative")
        rep = tail_report(hist, cfg.constraint)
        h = max(cfg.horizon, 1)
        rows.append({
            "kappa": cfg.kappa,
            "scheme": scheme,
            "violation_prob": rep.violation_prob,
            "q99": rep.q99,
            "excess_mean": rep.excess_mean,
            "excess_std": rep.excess_std,
            "avg_power": res.avg_power,
            "v_prob_rate": max(t[0] for t in vq) / h,
            "v_mean_rate": max(t[1] for t in vq) / h,
            "v_m2_rate": max(t[2] for t in vq) / h,
        })
    return rows


def _run_fed(cfg, extras) -> List[Dict[str, Any]]:
    from .fed_evt import FED_SCHEMES, simulate_fed

    rows = []
    for scheme in FED_SCHEMES:
        res = simulate_fed(cfg, scheme)
        up = [r["uplink_units"] for r in res.rows]
        _check(all(b >= a for a, b in zip(up, up[1:])), "payload ledger is cumulative")
        rows.extend(res.rows)
    return rows


def _run_rl(cfg, extras) -> List[Dict[str, Any]]:
    from .rl_offload import DqnConfig, OffloadEnv, bellman_residual, compare_schemes, evaluate_policy, \
        greedy_policy, value_iteration

    env = OffloadEnv(cfg)
    _, q_star = value_iteration(env)
    _check(bellman_residual(env, q_star) < 1e-6, "value iteration reaches the Bellman fixed point")
    horizon = extras["eval_horizon"]
    seed = extras["_seed"]
    costs = compare_schemes(cfg, seed, horizon, DqnConfig(**extras["dqn"]))
    costs["OPTIMAL"] = evaluate_policy(env, greedy_policy(q_star, env), horizon, seed)
    return [{"rho": cfg.rho, "energy_rate": cfg.energy_rate, "scheme": k, "avg_cost": v}
            for k, v in costs.items()]


def _run_vr(cfg, extras) -> List[Dict[str, Any]]:
    from .vr_arcade import run_all, total_delay

    rows = []
    for n in sorted(extras["players"]):
        for name, res in run_all(dataclasses.replace(cfg, n_users=n)).items():
            for r in res.frames:
                _check(r.total == total_delay(r.hd, r.cp, r.cm, r.tau_ep), "per-frame delay decomposition")
                _check(not r.cached or r.cp == 0, "cached frames need no rendering")
            rows.append(res.stats())
    return rows


def read_samples(path: str) -> np.ndarray:
    """One-column CSV; a non-numeric first row is taken as a header."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise ParseError(f"cannot read samples {path!r}: {exc}") from exc
    values = []
    for k, row in enumerate(rows):
        if len(row) != 1:
            raise ParseError(f"{path}: line {k + 1} has {len(row)} columns, expected 1")
        try:
            values.append(float(row[0]))
        except ValueError:
            if k == 0:
                continue
            raise ParseError(f"{path}: line {k + 1} is not a number") from None
    x = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ParseError(f"{path}: samples must be finite")
    return x


def run_fit(extras) -> Dict[str, Any]:
    from .evt import default_threshold, fit_gpd_mle, peaks_over_threshold

    x = read_samples(extras["input"])
    if x.size < 2:
        raise ConfigurationError("params.input: need at least two samples")
    d = extras["threshold"]
    d = default_threshold(x, extras["quantile"]) if d is None else float(d)
    exc = peaks_over_threshold(x, d)
    if len(exc) < 2:
        raise ConfigurationError("params.threshold: fewer than two samples exceed it")
    fit = fit_gpd_mle(exc, steps=int(extras["steps"]))
    _check(all(b >= a - 1e-9 * abs(a) for a, b in zip(fit.trace, fit.trace[1:])), "likelihood ascent is monotone")
    return {"sigma_tilde": fit.params.sigma_tilde, "xi": fit.params.xi, "threshold": d,
            "n_exceedances": len(exc), "loglik": fit.loglik}


RUNNERS = {"extreme-mec": _run_mec, "fed-evt": _run_fed, "rl-offload": _run_rl, "vr-arcade": _run_vr}


# ----------------------------------------------------------------------------- output

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows: Sequence[Dict[str, Any]]) -> str:
    if not rows:
        return ""
    cols = list(rows[0].keys())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def run_rows(exp: ExperimentConfig) -> List[Dict[str, Any]]:
    cfg, extras = materialize(exp)
    extras = dict(extras, _seed=exp.seed)
    return RUNNERS[exp.scenario](cfg, extras)


def _child_job(child: ExperimentConfig) -> List[Dict[str, Any]]:
    return run_rows(child)


def _value_tag(v) -> str:
    return json.dumps(v, sort_keys=True, separators=(",", ":")).replace("/", "_").replace('"', "")


def execute(exp: ExperimentConfig, jobs: int = 1) -> str:
    """Run a validated config, write outputs and return the manifest path."""
    t0 = time.perf_counter()
    os.makedirs(exp.out_dir, exist_ok=True)
    outputs: List[str] = []
    if exp.scenario == "fit":
        _, extras = materialize(exp)
        result = run_fit(extras)
        path = os.path.join(exp.out_dir, "fit.json")
        _write(path, json.dumps(result, sort_keys=True, indent=2) + "\n")
        outputs.append(path)
    elif exp.sweep is None:
        rows = run_rows(exp)
        path = os.path.join(exp.out_dir, f"{exp.scenario}.csv")
        _write(path, rows_to_csv(rows))
        outputs.append(path)
    else:
        children = sweep_children(exp)
        if jobs > 1 and len(children) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_child_job, children))
        else:
            results = [_child_job(c) for c in children]
        param = exp.sweep["param"]
        merged = []
        order = sorted(range(len(children)), key=lambda k: _sort_key(exp.sweep["values"][k]))
        for k in order:
            value, rows = exp.sweep["values"][k], results[k]
            path = os.path.join(exp.out_dir, f"{exp.scenario}__{param}={_value_tag(value)}.csv")
            _write(path, rows_to_csv(rows))
            outputs.append(path)
            merged.extend({"sweep_" + param: _value_tag(value), **r} for r in rows)
        path = os.path.join(exp.out_dir, f"{exp.scenario}__sweep.csv")
        _write(path, rows_to_csv(merged))
        outputs.append(path)
    manifest = {
        "config_hash": exp.config_hash(),
        "artifact_version": __version__,
        "scenario": exp.scenario,
        "seed": exp.seed,
        "wall_clock_s": round(time.perf_counter() - t0, 3),
        "outputs": [os.path.basename(p) for p in outputs],
        "config": exp.canonical(),
    }
    mpath = os.path.join(exp.out_dir, "manifest.json")
    _write(mpath, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return mpath


def _sort_key(v):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return (0, float(v), "")
    return (1, 0.0, json.dumps(v, sort_keys=True))


# ----------------------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="overrides the config and TAILSIM_SEED")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweep points")
    parser = argparse.ArgumentParser(prog="tailsim", description="Tail-latency edge-network simulations")
    sub = parser.add_subparsers(dest="command", required=True)
    fit = sub.add_parser("fit", parents=[common], help="fit a GPD to a one-column CSV of samples")
    fit.add_argument("input", nargs="?", help="samples CSV (or params.input in the config)")
    for name in ("sim", "sweep"):
        p = sub.add_parser(name, parents=[common], help=f"{name} one scenario")
        p.add_argument("scenario", choices=sorted(RUNNERS))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit with code 2
    try:
        if args.jobs < 1:
            raise ConfigurationError("--jobs must be >= 1")
        raw = load_json(args.config)
        if args.command == "fit":
            if args.input is not None:
                raw = dict(raw)
                raw["params"] = dict(raw.get("params", {}), input=args.input)
            exp = validate(raw, "fit", args.seed, args.out)
            if not os.path.isfile(exp.params["input"]):
                raise ConfigurationError(f"params.input: no such file {exp.params['input']!r}")
        else:
            exp = validate(raw, args.scenario, args.seed, args.out, require_sweep=args.command == "sweep")
            if args.command == "sim" and exp.sweep is not None:
                raise ConfigurationError("sweep: use the sweep command for configs with a sweep block")
        manifest = execute(exp, args.jobs)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ConfigurationError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
