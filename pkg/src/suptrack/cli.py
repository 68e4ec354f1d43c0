"""Command line interface: simulate, track, mc, evaluate.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .radar import read_grid_json, read_measurements_csv, write_grid_json, write_measurements_csv
from .scenario import ConfigError, load_config, default_config
from .tracker import ParticleCollapse

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("suptrack")


def _config(args):
    if args.config is None:
        return default_config()
    return load_config(args.config)


def cmd_simulate(args) -> int:
    scenario, run = _config(args)
    seed = run.seed if args.seed is None else args.seed
    truth, scans = harness.simulate(scenario, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = scenario.sensor_grid()
    write_grid_json(out / "grid.json", grid)
    write_measurements_csv(out / "measurements.csv", grid, scans)
    harness.write_truth_csv(out / "truth.csv", truth)
    print(f"wrote {len(scans)} scans to {out}")
    return EXIT_OK


def cmd_track(args) -> int:
    scenario, run = _config(args)
    if args.proposal:
        run.proposal = args.proposal
    if args.seed is not None:
        run.seed = args.seed
    mdir = Path(args.measurements)
    grid_path = mdir / "grid.json"
    grid = read_grid_json(grid_path) if grid_path.exists() else scenario.sensor_grid()
    if grid.m != scenario.sensor_grid().m:
        raise ConfigError("measurement grid does not match the configured grid")
    scans = read_measurements_csv(mdir / "measurements.csv" if mdir.is_dir() else mdir, grid)
    truth_path = mdir / "truth.csv"
    truth = harness.read_truth_csv(truth_path, len(scans)) if mdir.is_dir() and truth_path.exists() else None
    result = harness.track(scenario, run, scans, run.seed, truth)
    out = Path(args.out) if args.out else (mdir if mdir.is_dir() else mdir.parent)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_estimates_csv(out / "estimates.csv", result.steps)
    harness.write_metrics_csv(out / "metrics.csv", result.steps)
    for s in result.steps:
        print(f"k={s.k:3d} n_hat={s.n_hat} n_eff={s.n_eff:9.1f}" + (f" ospa={s.ospa:7.2f}" if truth else ""))
    return EXIT_OK


def cmd_mc(args) -> int:
    scenario, run = _config(args)
    if args.runs is not None:
        run.mc_runs = args.runs
    if args.seed is not None:
        run.seed = args.seed
    if args.workers is not None:
        run.workers = args.workers
    if args.proposal:
        run.proposal = args.proposal
    if args.snr is not None:
        scenario.snr_db = args.snr
    run.validate()
    agg, _ = harness.run_mc(scenario, run, args.out)
    for i in range(agg.K):
        print(f"k={i + 1:3d} mean_n_hat={agg.mean_n_hat[i]:.3f} mean_ospa={agg.mean_ospa[i]:.2f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    est = harness.read_estimates_csv(args.est)
    truth = harness.read_truth_csv(args.truth, max(est, default=None))
    steps = harness.evaluate(est, truth)
    if args.out:
        harness.write_metrics_csv(args.out, steps)
    summary = {"k": [s.k for s in steps], "n_true": [s.n_true for s in steps],
               "n_hat": [s.n_hat for s in steps], "ospa": [s.ospa for s in steps]}
    print(json.dumps(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="suptrack", description="Labeled multi-target particle tracker for radar power returns")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="truth and measurements for one seed")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("track", help="run the tracker on a measurement dump")
    s.add_argument("--config")
    s.add_argument("--measurements", required=True, help="directory written by simulate, or a measurements CSV")
    s.add_argument("--proposal", choices=("lmb", "vovo", "transition"))
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("mc", help="Monte Carlo batch")
    s.add_argument("--config")
    s.add_argument("--runs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--proposal", choices=("lmb", "vovo", "transition"))
    s.add_argument("--snr", type=float)
    s.add_argument("--out", default="mc_out")
    s.set_defaults(func=cmd_mc)

    s = sub.add_parser("evaluate", help="OSPA and cardinality of an estimate CSV against a truth CSV")
    s.add_argument("--est", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParticleCollapse, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
