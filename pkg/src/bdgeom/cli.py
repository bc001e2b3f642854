"""Command-line interface: configuration, orchestration, report emission.

Subcommands:
    simulate     event-driven statistic paths -> paths.csv
    theory       limit covariance mixture -> model.json
    covariance   paths + empirical vs theoretical covariance -> cov.csv
    gaussianity  Kolmogorov distance of the standardized statistic
    oracle       moment-identity battery
    euler        critical-point alternating-sum battery
    full         the complete acceptance battery

Configuration comes from a JSON file; flags override file fields; the seed
can also come from the BD_GEOM_SEED environment variable (flag > env >
file).  All outputs are deterministic given the seed: reruns are
byte-identical.  Exit codes: 0 success / all checks pass, 1 a check failed,
2 invalid configuration.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import suite
from .functionals import ConfigError, from_selector, neighborhood_from_selector
from .process import SimulationConfig, density_from_spec, sample_stationary
from .statistics import evaluate_statistic, sample_path
from .theory import exclusive_mixture_model, mixture_model
from .verify import estimate_covariance, kolmogorov_distance


# ---------------------------------------------------------------------------
# configuration plumbing


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as handle:
            cfg = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    return cfg


def _resolve_seed(flag_seed: Optional[int], cfg: dict) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("BD_GEOM_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"BD_GEOM_SEED must be an integer, got {env!r}")
    return int(cfg.get("seed", 0))


def _time_grid(spec, name: str) -> np.ndarray:
    if isinstance(spec, dict):
        try:
            start, stop, step = float(spec["start"]), float(spec["stop"]), float(spec["step"])
        except KeyError as exc:
            raise ConfigError(f"{name} grid needs start/stop/step, missing {exc}")
        if step <= 0 or stop < start:
            raise ConfigError(f"{name} grid must have step > 0 and stop >= start")
        return np.arange(start, stop + step / 2.0, step)
    grid = np.asarray(spec, dtype=float)
    if grid.ndim != 1 or len(grid) == 0:
        raise ConfigError(f"{name} must be a non-empty list of times")
    if np.any(np.diff(grid) <= 0):
        raise ConfigError(f"{name} must be strictly increasing")
    return grid


def _sim_config(cfg: dict, seed: int) -> SimulationConfig:
    for key in ("n",):
        if key not in cfg:
            raise ConfigError(f"config field {key!r} is required")
    dim = int(cfg.get("dim", 2))
    density = density_from_spec(cfg.get("density", "uniform"), dim)
    return SimulationConfig(
        n=float(cfg["n"]),
        dim=dim,
        horizon=float(cfg.get("horizon", 0.0)),
        density=density,
        seed=seed,
        gamma=(float(cfg["gamma"]) if "gamma" in cfg else None),
    )


def _radius(cfg: dict, config: SimulationConfig) -> float:
    if "r" in cfg:
        return float(cfg["r"])
    return config.interaction_radius  # gamma-first: r = (gamma / n) ** (1 / d)


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w") as handle:
        handle.write(header + "\n")
        for row in rows:
            handle.write(",".join(_cell(v) for v in row) + "\n")


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _out_dir(cfg: dict, flag_out: Optional[str]) -> Path:
    out = Path(flag_out if flag_out is not None else cfg.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# path simulation (the event-driven route)


def _simulate_one(args: tuple) -> list[float]:
    cfg, seed, times, rep = args
    config = _sim_config(cfg, seed)
    functional = from_selector(cfg.get("functional", "clique:2"))
    nbhd = neighborhood_from_selector(cfg.get("neighborhood", "none"))
    series = sample_path(config, functional, times, _radius(cfg, config), nbhd, rep)
    return [float(v) for v in series.values]


def _simulate_paths(cfg: dict, seed: int, times: np.ndarray, reps: int, jobs: int) -> np.ndarray:
    tasks = [(cfg, seed, tuple(times), rep) for rep in range(reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_simulate_one, tasks))
    else:
        rows = [_simulate_one(task) for task in tasks]
    return np.asarray(rows)


def _paths_rows(times: np.ndarray, matrix: np.ndarray):
    for rep in range(matrix.shape[0]):
        for t, v in zip(times, matrix[rep]):
            yield rep, float(t), float(v)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: dict, seed: int, out: Path, jobs: int) -> int:
    times = _time_grid(cfg.get("sample_times", {"start": 0.0, "stop": cfg.get("horizon", 0.0), "step": 1.0}), "sample_times")
    reps = int(cfg.get("replications", 1))
    if reps < 1:
        raise ConfigError("replications must be >= 1")
    matrix = _simulate_paths(cfg, seed, times, reps, jobs)
    _write_csv(out / "paths.csv", "rep,t,value", _paths_rows(times, matrix))
    _write_json(
        out / "summary.json",
        {
            "command": "simulate",
            "seed": seed,
            "replications": reps,
            "sample_times": [float(t) for t in times],
            "mean": float(matrix.mean()),
            "files": ["paths.csv"],
        },
    )
    return 0


def _build_model(cfg: dict, seed: int):
    functional = from_selector(cfg.get("functional", "clique:2"))
    nbhd = neighborhood_from_selector(cfg.get("neighborhood", "none"))
    dim = int(cfg.get("dim", 2))
    density = density_from_spec(cfg.get("density", "uniform"), dim)
    gamma = float(cfg.get("gamma", 1.0))
    if nbhd is None:
        return mixture_model(
            functional,
            density,
            gamma,
            budget=int(cfg.get("budget", 200_000)),
            seed=seed,
            method=cfg.get("method", "auto"),
        )
    return exclusive_mixture_model(
        functional,
        nbhd,
        density,
        gamma,
        budget=int(cfg.get("budget", 20_000)),
        vol_samples=int(cfg.get("vol_samples", 10_000)),
        max_rate=int(cfg.get("max_rate", 20)),
        tail_tol=float(cfg.get("tail_tol", 1e-8)),
        seed=seed,
    )


def cmd_theory(cfg: dict, seed: int, out: Path, jobs: int) -> int:
    model = _build_model(cfg, seed)
    model.save(str(out / "model.json"))
    _write_json(
        out / "summary.json",
        {
            "command": "theory",
            "seed": seed,
            "kind": model.kind,
            "rates": model.rates,
            "weights": [float(w) for w in model.weights],
            "files": ["model.json"],
        },
    )
    return 0


def cmd_covariance(cfg: dict, seed: int, out: Path, jobs: int) -> int:
    if "horizon" not in cfg:
        raise ConfigError("covariance mode needs a horizon")
    times = _time_grid(
        cfg.get("sample_times", {"start": 0.0, "stop": float(cfg["horizon"]), "step": 0.25}),
        "sample_times",
    )
    lags = _time_grid(cfg.get("lags", [0.0, 0.5, 1.0, 2.0]), "lags")
    if lags[-1] > times[-1] - times[0]:
        raise ConfigError("lags must fit inside the sample-time span")
    reps = int(cfg.get("replications", 100))
    if reps < 3:
        raise ConfigError("covariance mode needs replications >= 3")
    tolerance = float(cfg.get("tolerance", 0.05))
    matrix = _simulate_paths(cfg, seed, times, reps, jobs)
    _write_csv(out / "paths.csv", "rep,t,value", _paths_rows(times, matrix))
    model = _build_model(cfg, seed)
    model.save(str(out / "model.json"))
    est = estimate_covariance((times, matrix), lags)
    theory = model.curve(lags)
    _write_csv(
        out / "cov.csv",
        "lag,emp,ci,theory",
        (
            (float(lag), float(v), float(ci), float(th))
            for lag, v, ci, th in zip(lags, est.values, est.half_widths, theory)
        ),
    )
    gap = float(np.max(np.abs(est.values - theory)))
    passed = gap <= tolerance
    _write_json(
        out / "summary.json",
        {
            "command": "covariance",
            "seed": seed,
            "replications": reps,
            "max_gap": gap,
            "tolerance": tolerance,
            "pass": passed,
            "files": ["paths.csv", "model.json", "cov.csv"],
        },
    )
    return 0 if passed else 1


def cmd_gaussianity(cfg: dict, seed: int, out: Path, jobs: int) -> int:
    reps = int(cfg.get("replications", 500))
    if reps < 10:
        raise ConfigError("gaussianity mode needs replications >= 10")
    threshold = float(cfg.get("threshold", 0.05))
    config = _sim_config(cfg, seed)
    functional = from_selector(cfg.get("functional", "clique:2"))
    nbhd = neighborhood_from_selector(cfg.get("neighborhood", "none"))
    r = _radius(cfg, config)
    values = np.zeros(reps)
    for rep in range(reps):
        state = sample_stationary(config, config.rng(rep))
        values[rep] = evaluate_statistic(state, functional, r, nbhd)
    spread = values.std(ddof=1)
    if spread == 0:
        raise ConfigError("statistic is degenerate under this configuration")
    distance = kolmogorov_distance((values - values.mean()) / spread)
    passed = distance < threshold
    _write_csv(
        out / "paths.csv",
        "rep,t,value",
        ((rep, 0.0, float(values[rep])) for rep in range(reps)),
    )
    _write_json(
        out / "summary.json",
        {
            "command": "gaussianity",
            "seed": seed,
            "replications": reps,
            "kolmogorov_distance": distance,
            "threshold": threshold,
            "pass": passed,
            "files": ["paths.csv"],
        },
    )
    return 0 if passed else 1


def cmd_oracle(cfg: dict, seed: int, out: Path, jobs: int) -> int:
    n_seeds = int(cfg.get("seeds", 5))
    reports = []
    agreements = []
    for s in range(n_seeds):
        for name, result in suite.mecke_battery(seed + s):
            agreements.append(result.agree)
            reports.append(
                {
                    "test": name,
                    "statistic": result.gap,
                    "threshold": result.tolerance,
                    "pass": result.agree,
                    "seed": seed + s,
                    "budget": None,
                    "lhs": result.lhs,
                    "rhs": result.rhs,
                }
            )
    rate = float(np.mean(agreements))
    passed = rate >= 0.95
    _write_json(
        out / "summary.json",
        {
            "command": "oracle",
            "seed": seed,
            "pass_rate": rate,
            "threshold": 0.95,
            "pass": passed,
            "cases": reports,
        },
    )
    for report in reports:
        status = "pass" if report["pass"] else "FAIL"
        print(f"[{status}] {report['test']} seed={report['seed']} "
              f"gap={report['statistic']:.4f} tol={report['threshold']:.4f}")
    print(f"oracle battery pass rate: {rate:.3f} (need >= 0.95)")
    return 0 if passed else 1


def cmd_euler(cfg: dict, seed: int, out: Path, jobs: int) -> int:
    result = suite.check_euler(seed=seed)
    _write_json(
        out / "summary.json",
        {"command": "euler", "seed": seed, "checks": [result.to_dict()], "pass": result.passed},
    )
    print(result.line())
    return 0 if result.passed else 1


def cmd_full(cfg: dict, seed: int, out: Path, jobs: int) -> int:
    names = cfg.get("checks")
    try:
        results = suite.run_all(names, seed=seed, jobs=jobs, progress=lambda r: print(r.line(), flush=True))
    except KeyError as exc:
        raise ConfigError(str(exc))
    passed = all(r.passed for r in results)
    _write_json(
        out / "summary.json",
        {
            "command": "full",
            "seed": seed,
            "checks": [r.to_dict() for r in results],
            "pass": passed,
        },
    )
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return 0 if passed else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "theory": cmd_theory,
    "covariance": cmd_covariance,
    "gaussianity": cmd_gaussianity,
    "oracle": cmd_oracle,
    "euler": cmd_euler,
    "full": cmd_full,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bdgeom",
        description="Birth-death point process simulator and verification suite",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="overrides BD_GEOM_SEED and the config file")
        p.add_argument("--out", default=None, help="output directory (default: config 'out' or '.')")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for replications/checks")
        p.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                       help="override a config field, e.g. --set n=200 --set functional='\"clique:3\"'")
    return parser


def _apply_overrides(cfg: dict, pairs: Sequence[str]) -> dict:
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=JSON, got {pair!r}")
        key, _, raw = pair.partition("=")
        try:
            cfg[key] = json.loads(raw)
        except json.JSONDecodeError:
            cfg[key] = raw  # bare strings allowed
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _apply_overrides(_load_config(args.config), args.set)
        seed = _resolve_seed(args.seed, cfg)
        out = _out_dir(cfg, args.out)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        return COMMANDS[args.command](cfg, seed, out, args.jobs)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
