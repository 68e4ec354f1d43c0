"""Single runs, Monte Carlo batches and their CSV/JSON outputs.

Every run draws from its own ``SeedSequence`` child of the batch seed, split
into independent truth, measurement and filter streams, so results do not
depend on the number of worker processes.
"""

from __future__ import annotations

import csv
import json
import logging
import multiprocessing as mp
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import OspaParams, aggregate, ospa
from .radar import PowerMeasurement
from .rfs import Label, LabeledSet
from .scenario import RunConfig, ScenarioConfig, config_to_dict, generate_truth
from .tracker import MultiTargetParticleFilter, TrackRecord, estimate

log = logging.getLogger(__name__)

ESTIMATE_HEADER = ("k", "n_hat", "label", "exist", "px", "vx", "py", "vy")
TRUTH_HEADER = ("k", "label", "px", "vx", "py", "vy")
METRICS_HEADER = ("k", "n_true", "n_hat", "ospa", "n_eff")
AGGREGATE_HEADER = ("k", "mean_n_true", "mean_n_hat", "std_n_hat", "mean_ospa", "std_ospa")


@dataclass
class StepRecord:
    k: int
    n_true: int
    n_hat: int
    ospa: float
    n_eff: float
    tracks: list = field(default_factory=list)
    violations: int = 0  # LMB particles with non-finite f/q


@dataclass
class RunResult:
    truth: list
    steps: list

    def series(self) -> list[tuple[int, float]]:
        return [(s.n_hat, s.ospa) for s in self.steps]


def _seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))


def run_seed_sequences(seed: int, runs: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(int(seed)).spawn(runs)


def positions(X: LabeledSet) -> np.ndarray:
    if len(X) == 0:
        return np.zeros((0, 2))
    return np.array([[e.x[0], e.x[2]] for e in X])


def simulate(scenario: ScenarioConfig, seed) -> tuple[list[LabeledSet], list[PowerMeasurement]]:
    truth_ss, meas_ss, _ = _seed_sequence(seed).spawn(3)
    truth = generate_truth(scenario, np.random.default_rng(truth_ss))
    sensor = scenario.sensor()
    rng = np.random.default_rng(meas_ss)
    return truth, [sensor.simulate(X, rng, k) for k, X in enumerate(truth, start=1)]


def track(scenario: ScenarioConfig, run: RunConfig, measurements, seed, truth=None) -> RunResult:
    """Run the tracker over measurement scans; with ``truth`` also score each step."""
    _, _, filt_ss = _seed_sequence(seed).spawn(3)
    rng = np.random.default_rng(filt_ss)
    f = MultiTargetParticleFilter(run.motion(scenario), scenario.sensor(), run.tracker_config(scenario))
    state = f.initial_state()
    steps = []
    for i, z in enumerate(measurements):
        state = f.step(state, z, rng)
        est = estimate(state)
        n_true, d = -1, float("nan")
        if truth is not None:
            n_true = len(truth[i])
            d = ospa(positions(truth[i]), est.positions(), run.ospa)
        steps.append(StepRecord(state.k, n_true, est.n_hat, d, state.n_eff, est.tracks, state.violations))
    return RunResult(truth, steps)


def run_once(scenario: ScenarioConfig, run: RunConfig, seed=None) -> RunResult:
    """Truth, measurements, tracking and OSPA for one seed (``run.seed`` by default)."""
    seed = run.seed if seed is None else seed
    truth, scans = simulate(scenario, seed)
    return track(scenario, run, scans, seed, truth)


def _mc_worker(args):
    scenario, run, ss = args
    return run_once(scenario, run, ss)


def run_mc(scenario: ScenarioConfig, run: RunConfig, out_dir=None, keep_runs: bool = False):
    """``run.mc_runs`` independent runs; returns (aggregate, list of results or None)."""
    seqs = run_seed_sequences(run.seed, run.mc_runs)
    jobs = [(scenario, run, ss) for ss in seqs]
    if run.workers > 1:
        with mp.get_context("fork").Pool(run.workers) as pool:
            results = pool.map(_mc_worker, jobs, chunksize=1)
    else:
        results = [_mc_worker(j) for j in jobs]
    agg = aggregate([r.series() for r in results])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        n_true = np.mean([[s.n_true for s in r.steps] for r in results], axis=0)
        write_aggregate_csv(out / "aggregate.csv", agg, n_true)
        write_summary_json(out / "summary.json", agg, n_true, scenario, run)
        for i, r in enumerate(results):
            write_metrics_csv(out / f"run_{i:03d}_metrics.csv", r.steps)
            write_estimates_csv(out / f"run_{i:03d}_estimates.csv", r.steps)
    return agg, (results if keep_runs else None)


# ---------------------------------------------------------------------------
# CSV / JSON
# ---------------------------------------------------------------------------


def _f(v) -> str:
    return repr(float(v))


def write_estimates_csv(path, steps) -> None:
    """One row per reported track; a step with no tracks gets one row with an empty label."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ESTIMATE_HEADER)
        for s in steps:
            if not s.tracks:
                w.writerow((s.k, s.n_hat, "", "", "", "", "", ""))
            for t in s.tracks:
                w.writerow((s.k, s.n_hat, str(t.label), _f(t.existence), *(_f(v) for v in t.mean[:4])))


def read_estimates_csv(path) -> dict[int, list[TrackRecord]]:
    out: dict[int, list] = {}
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if tuple(r.fieldnames or ()) != ESTIMATE_HEADER:
            raise ValueError(f"unexpected estimate header {r.fieldnames}")
        for row in r:
            k = int(row["k"])
            out.setdefault(k, [])
            if row["label"]:
                mean = np.array([float(row[c]) for c in ("px", "vx", "py", "vy")])
                out[k].append(TrackRecord(Label.parse(row["label"]), float(row["exist"]), mean, np.zeros((4, 4))))
    return out


def write_truth_csv(path, truth) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRUTH_HEADER)
        for k, X in enumerate(truth, start=1):
            for e in X:
                w.writerow((k, str(e.label), *(_f(v) for v in e.x[:4])))


def read_truth_csv(path, K: int | None = None) -> list[LabeledSet]:
    by_k: dict[int, list] = {}
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if tuple(r.fieldnames or ()) != TRUTH_HEADER:
            raise ValueError(f"unexpected truth header {r.fieldnames}")
        for row in r:
            x = np.array([float(row[c]) for c in ("px", "vx", "py", "vy")])
            by_k.setdefault(int(row["k"]), []).append((x, Label.parse(row["label"])))
    K = max(by_k, default=0) if K is None else K
    return [LabeledSet(by_k.get(k, [])) for k in range(1, K + 1)]


def write_metrics_csv(path, steps) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for s in steps:
            w.writerow((s.k, s.n_true, s.n_hat, _f(s.ospa), _f(s.n_eff)))


def write_aggregate_csv(path, agg, n_true) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(AGGREGATE_HEADER)
        for i in range(agg.K):
            w.writerow((i + 1, _f(n_true[i]), _f(agg.mean_n_hat[i]), _f(agg.std_n_hat[i]),
                        _f(agg.mean_ospa[i]), _f(agg.std_ospa[i])))


def write_summary_json(path, agg, n_true, scenario: ScenarioConfig, run: RunConfig) -> None:
    config = config_to_dict(scenario, run)
    config["run"].pop("workers")  # execution detail; results do not depend on it
    doc = {
        "runs": run.mc_runs,
        "seed": int(run.seed),
        "k": list(range(1, agg.K + 1)),
        "mean_n_true": [float(v) for v in n_true],
        "mean_n_hat": [float(v) for v in agg.mean_n_hat],
        "std_n_hat": [float(v) for v in agg.std_n_hat],
        "mean_ospa": [float(v) for v in agg.mean_ospa],
        "std_ospa": [float(v) for v in agg.std_ospa],
        "config": config,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def evaluate(estimates: dict[int, list], truth: list[LabeledSet], params: OspaParams = OspaParams()) -> list[StepRecord]:
    """Score estimates read back from CSV against truth, step by step."""
    out = []
    for k, X in enumerate(truth, start=1):
        tracks = estimates.get(k, [])
        est = np.array([[t.mean[0], t.mean[2]] for t in tracks]).reshape(-1, 2)
        out.append(StepRecord(k, len(X), len(tracks), ospa(positions(X), est, params), float("nan"), tracks))
    return out
