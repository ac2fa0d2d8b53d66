"""Command-line entry point: ``feedlearn {simulate,sweep,experiment,pricing,bandwidth}``.

Each command reads an optional YAML config (unknown keys are rejected),
derives all randomness from ``--seed`` and writes plot-ready CSV/JSON into
``--out``. CSV files open with a ``#`` comment line naming the tool
version, seed and config hash; JSON files carry the same under ``"meta"``.

Exit codes: 0 success, 2 configuration or domain error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import io
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np
import pandas as pd
import yaml

from feedlearn import __version__
from feedlearn.bandwidth import (
    BandwidthSchedule,
    PopulationSequence,
    bandwidth_learning_diagnostic,
    nonbayesian_rate_marginal,
)
from feedlearn.beliefs import (
    mislearning_probability,
    nonbayesian_rate,
    sender_influence,
    simulate_nonbayesian,
)
from feedlearn.errors import ConfigError, DomainError, NumericError
from feedlearn.experiment import (
    ExperimentConfig,
    RModel,
    calibrate_sigma_eps,
    estimate,
    fit_recall_curve,
    generate_dataset,
    overcount_curve,
    DATASET_COLUMNS,
)
from feedlearn.feed import sample_feed
from feedlearn.model import Population, SignalModel
from feedlearn.pricing import verification_table
from feedlearn.recall import asymptotic_recall

POPULATION_DEFAULTS = {"rates": [2.0, 1.0, 1.0], "p_hi": 0.75, "p_lo": None, "signals": None, "theta": 1}

DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {
        "seed": 0,
        "population": POPULATION_DEFAULTS,
        "horizon": 500.0,
        "r": 0.5,
        "replicates": 200,
        "trajectories": "all",
    },
    "sweep": {
        "seed": 0,
        "r": [0.0, 0.05, 0.16, 0.5, 1.0],
        "n": [2, 5, 10],
        "high_rate": [1.0, 2.0, 6.0],
        "base_rate": 1.0,
        "p_hi": 0.75,
        "p_lo": None,
        "mc_draws": 100_000,
    },
    "experiment": {
        "seed": 0,
        "num_participants": 1000,
        "r0": 0.16,
        "effects": {},
        "sigma_eps": "calibrate",
        "target_ci_width": 0.07,
        "mode": "mean",
        "variant": "all",
        "share_blue": 0.5,
        "n_totals": [8, 10],
        "alpha_max": 6,
        "eta_sd": 0.0,
        "r_recall": 0.05,
        "false_alarm": 0.0,
        "covariates": [],
        "include_first_feed": False,
        "max_abs_error": None,
        "reps": 2000,
        "level": 0.95,
        "curve_n_total": 8,
    },
    "pricing": {
        "seed": 0,
        "cases": [[4, 8.0], [10, 5.0], [50, 50.0]],
        "kinds": ["linear", "quadratic"],
        "tol": 1e-6,
    },
    "bandwidth": {
        "seed": 0,
        "schedules": ["constant:5", "linear:0.5", "sqrt:2"],
        "n_grid": [10, 100, 1000, 10000],
        "population": {"rate_range": [0.5, 1.5], "p_hi_range": [0.6, 0.9], "p_lo_range": None},
        "horizon_factor": 1.0,
    },
}


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def _merge(defaults: dict, given: dict, path: str = "") -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(defaults[key], dict) and defaults[key] and key != "effects":
            out[key] = _merge(defaults[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def load_config(command: str, path: str | Path | None, seed: int | None = None) -> dict:
    raw: dict = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = _merge(DEFAULTS[command], raw)
    if seed is not None:
        cfg["seed"] = seed
    if not isinstance(cfg["seed"], int) or not 0 <= cfg["seed"] < 2**63:
        raise ConfigError("seed must be a non-negative 64-bit integer")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _header(cfg: dict) -> str:
    return f"# feedlearn {__version__} seed={cfg['seed']} config={config_hash(cfg)}\n"


def _meta(cfg: dict) -> dict:
    return {"tool": "feedlearn", "version": __version__, "seed": cfg["seed"], "config_hash": config_hash(cfg)}


def _write_csv(path: Path, cfg: dict, frame: pd.DataFrame) -> Path:
    buf = io.StringIO()
    buf.write(_header(cfg))
    frame.to_csv(buf, index=False, lineterminator="\n")
    path.write_text(buf.getvalue())
    return path


def _write_json(path: Path, cfg: dict, payload: dict) -> Path:
    path.write_text(json.dumps({"meta": _meta(cfg), **payload}, indent=2, sort_keys=True) + "\n")
    return path


def _parallel_map(fn: Callable, items: Iterable, threads: int) -> list:
    items = list(items)
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _population(block: dict, seed: int) -> Population:
    rates = [float(a) for a in block["rates"]]
    n = len(rates)
    p_hi = block["p_hi"] if isinstance(block["p_hi"], list) else [block["p_hi"]] * n
    p_lo = block["p_lo"]
    if p_lo is None:
        p_lo = [1.0 - p for p in p_hi]
    elif not isinstance(p_lo, list):
        p_lo = [p_lo] * n
    if len(p_hi) != n or len(p_lo) != n:
        raise ConfigError("p_hi and p_lo lists must match the number of rates")
    models = [SignalModel(float(a), float(b)) for a, b in zip(p_hi, p_lo)]
    if block["signals"] is not None:
        return Population.from_signals(rates, models, block["signals"], block["theta"])
    return Population.sample(rates, models, block["theta"], np.random.default_rng([seed, 1]))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def run_simulate(cfg: dict, out: Path, threads: int = 1) -> list[Path]:
    """Replicate non-Bayesian trajectories next to the analytic long-run slope."""
    pop = _population(cfg["population"], cfg["seed"])
    horizon, r, reps = float(cfg["horizon"]), float(cfg["r"]), int(cfg["replicates"])
    if reps < 1 or cfg["trajectories"] not in ("all", "first", "none"):
        raise ConfigError("replicates must be >= 1 and trajectories one of all/first/none")

    def replicate(k: int):
        rng = np.random.default_rng(cfg["seed"] + k)
        return simulate_nonbayesian(sample_feed(pop, horizon, rng), pop, r, rng)

    trajs = _parallel_map(replicate, range(reps), threads)
    summary = nonbayesian_rate(pop, r)
    slopes = np.array([t.final_phi / horizon for t in trajs])
    recall = []
    for s in pop.senders:
        hits, total = np.sum([t.recall_frequency(s.id) for t in trajs], axis=0)
        recall.append({
            "sender": s.id,
            "empirical": float(hits / total) if total else None,
            "asymptotic": asymptotic_recall(s.rate, pop.total_rate, r),
        })
    mean = float(slopes.mean())
    payload = {
        "analytic_rate": summary.rate,
        "per_sender_terms": list(summary.per_sender_terms),
        "influence": [sender_influence(s.id, pop, r) for s in pop.senders],
        "signals": pop.signals.tolist(),
        "empirical_rate_mean": mean,
        "empirical_rate_se": float(slopes.std(ddof=1) / np.sqrt(reps)) if reps > 1 else None,
        "relative_error": abs(mean - summary.rate) / abs(summary.rate) if summary.rate else None,
        "recall": recall,
        "horizon": horizon,
        "r": r,
        "replicates": reps,
    }
    paths = [_write_json(out / "rate_summary.json", cfg, payload)]
    if cfg["trajectories"] != "none":
        keep = trajs if cfg["trajectories"] == "all" else trajs[:1]
        frames = [
            pd.DataFrame({"replicate": k, "time": t.times, "phi": t.phi,
                          "mu1": 1.0 / (1.0 + np.exp(-t.phi))})
            for k, t in enumerate(keep)
        ]
        paths.append(_write_csv(out / "trajectories.csv", cfg, pd.concat(frames, ignore_index=True)))
    return paths


def run_sweep(cfg: dict, out: Path, threads: int = 1) -> list[Path]:
    """Analytic quantities over the grid r x n x high_rate (one high sender, n - 1 base senders)."""
    axes = {k: list(cfg[k]) for k in ("r", "n", "high_rate")}
    if any(len(v) == 0 for v in axes.values()):
        raise ConfigError("every sweep axis needs at least one value")
    p_hi = float(cfg["p_hi"])
    p_lo = 1.0 - p_hi if cfg["p_lo"] is None else float(cfg["p_lo"])
    model = SignalModel(p_hi, p_lo)
    points = [(r, n, h) for n in axes["n"] for h in axes["high_rate"] for r in axes["r"]]

    def evaluate(idx_point):
        idx, (r, n, h) = idx_point
        n = int(n)
        rates = [float(h)] + [float(cfg["base_rate"])] * (n - 1)
        pop = Population.from_signals(rates, model, [1] * n)
        row = {
            "r": float(r), "n": n, "high_rate": float(h),
            "rate_marginal": nonbayesian_rate_marginal(pop, float(r)),
            "high_influence": sender_influence(1, pop, float(r)),
            "high_recall": asymptotic_recall(float(h), pop.total_rate, float(r)),
        }
        infl = [sender_influence(i, pop, float(r)) for i in range(1, n + 1)]
        row["high_share"] = infl[0] / sum(infl) if sum(infl) > 0 else float("nan")
        if r > 0:
            rng = np.random.default_rng(cfg["seed"] + idx)
            res = mislearning_probability([model] * n, rates, float(r), draws=int(cfg["mc_draws"]), rng=rng)
            row.update(p_wrong=res.p_wrong, p_tie=res.p_tie, p_se=res.se, method=res.method)
        else:
            row.update(p_wrong=float("nan"), p_tie=float("nan"), p_se=float("nan"), method="none")
        return row

    frame = pd.DataFrame(_parallel_map(evaluate, list(enumerate(points)), threads))
    frame["rate_monotone_in_r"] = (
        frame.sort_values("r", kind="stable")
        .groupby(["n", "high_rate"], sort=False)["rate_marginal"]
        .transform(lambda s: bool(np.all(np.diff(s.to_numpy()) >= -1e-12)))
        .reindex(frame.index)
    )
    return [_write_csv(out / "sweep.csv", cfg, frame)]


def run_experiment(cfg: dict, out: Path, threads: int = 1) -> list[Path]:
    """Generate a synthetic study, then filter, fit and bootstrap r."""
    n_part = int(cfg["num_participants"])
    r0 = float(cfg["r0"])
    sigma = cfg["sigma_eps"]
    if sigma == "calibrate":
        sigma = calibrate_sigma_eps(float(cfg["target_ci_width"]), r0, n_part,
                                    feeds=3 if cfg["include_first_feed"] else 2,
                                    n_totals=tuple(cfg["n_totals"]), alpha_max=int(cfg["alpha_max"]),
                                    level=float(cfg["level"]), variant=cfg["variant"])
    config = ExperimentConfig(
        num_participants=n_part,
        r_model=RModel(r0, cfg["effects"], float(sigma)),
        seed=cfg["seed"],
        share_blue=float(cfg["share_blue"]),
        n_totals=tuple(int(n) for n in cfg["n_totals"]),
        alpha_max=int(cfg["alpha_max"]),
        mode=cfg["mode"],
        variant=cfg["variant"],
        eta_sd=float(cfg["eta_sd"]),
        r_recall=float(cfg["r_recall"]),
        false_alarm=float(cfg["false_alarm"]),
    )
    data = generate_dataset(config)
    max_err = cfg["max_abs_error"]
    result = estimate(
        data.rows, cfg["covariates"],
        include_first_feed=bool(cfg["include_first_feed"]),
        max_abs_error=float("inf") if max_err is None else float(max_err),
        reps=int(cfg["reps"]), level=float(cfg["level"]), seed=cfg["seed"], variant=cfg["variant"],
    )
    result["sigma_eps_true"] = float(sigma)
    result["generating"] = {"r0": r0, "effects": dict(cfg["effects"])}

    high = data.recognition[data.recognition["role"] == "high"]
    recall_fit = fit_recall_curve(high)
    result["recall_curve"] = {"r": recall_fit.r, "loglik": recall_fit.loglik,
                              "n": recall_fit.n, "at_boundary": recall_fit.at_boundary}

    rows = data.rows[data.rows["known_question"] == 1]
    curve_rows = rows[rows["n_total"] == int(cfg["curve_n_total"])]
    curve = overcount_curve(curve_rows, r=result["coefficients"]["r0"] if not cfg["covariates"] else None,
                            reps=int(cfg["reps"]), level=float(cfg["level"]), seed=cfg["seed"],
                            variant=cfg["variant"])
    return [
        _write_csv(out / "dataset.csv", cfg, data.rows[DATASET_COLUMNS]),
        _write_csv(out / "recognition.csv", cfg, data.recognition),
        _write_json(out / "estimates.json", cfg, result),
        _write_csv(out / "overcount_curve.csv", cfg, curve),
    ]


def run_pricing(cfg: dict, out: Path, threads: int = 1) -> list[Path]:
    cases = [(int(n), float(B)) for n, B in cfg["cases"]]
    frame = pd.DataFrame(verification_table(cases, tuple(cfg["kinds"]), float(cfg["tol"])))
    return [_write_csv(out / "pricing.csv", cfg, frame)]


def run_bandwidth(cfg: dict, out: Path, threads: int = 1) -> list[Path]:
    block = cfg["population"]
    seq = PopulationSequence(
        rate_range=tuple(block["rate_range"]),
        p_hi_range=tuple(block["p_hi_range"]),
        p_lo_range=None if block["p_lo_range"] is None else tuple(block["p_lo_range"]),
        seed=cfg["seed"],
    )
    schedules = [BandwidthSchedule.parse(s) for s in cfg["schedules"]]

    def diagnose(item):
        text, schedule = item
        table = bandwidth_learning_diagnostic(seq, schedule, cfg["n_grid"], float(cfg["horizon_factor"]))
        return [{"schedule": text, **row} for row in table.rows]

    tables = _parallel_map(diagnose, list(zip(cfg["schedules"], schedules)), threads)
    frame = pd.DataFrame([row for table in tables for row in table])
    return [_write_csv(out / "bandwidth.csv", cfg, frame)]


COMMANDS = {
    "simulate": run_simulate,
    "sweep": run_sweep,
    "experiment": run_experiment,
    "pricing": run_pricing,
    "bandwidth": run_bandwidth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feedlearn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"feedlearn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0] if fn.__doc__ else None)
        p.add_argument("--config", type=Path, default=None, help="YAML config file")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads for replicates/grid points")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args.config, args.seed)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        args.out.mkdir(parents=True, exist_ok=True)
        paths = COMMANDS[args.command](cfg, args.out, args.threads)
    except (ConfigError, DomainError, KeyError, TypeError) as exc:
        print(f"feedlearn {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"feedlearn {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 3
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
