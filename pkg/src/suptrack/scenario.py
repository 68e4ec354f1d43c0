"""Scenario and run configuration, JSON round-trip, and ground-truth generation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .metrics import OspaParams
from .motion import build_ncv
from .radar import RadarSensor, SensorGrid, amplitude_from_snr
from .rfs import Label, LabeledSet, LabeledState
from .sacphd import Clamps
from .tracker import PROPOSALS, VOVO_WEIGHT_MODES, TrackerConfig


class ConfigError(ValueError):
    """Invalid scenario or run configuration."""


@dataclass
class GridSpec:
    range_limits: tuple = (1000.0, 2000.0)
    range_step: float = 10.0
    azimuth_limits_deg: tuple = (30.0, 60.0)
    azimuth_step_deg: float = 1.0
    noise_var: float = 1.0
    doppler_limits: tuple | None = None
    doppler_step: float = 1.0

    def build(self, range_res: float, azimuth_res_deg: float, doppler_res: float) -> SensorGrid:
        return SensorGrid.regular(
            range_limits=tuple(self.range_limits),
            range_step=self.range_step,
            azimuth_limits_deg=tuple(self.azimuth_limits_deg),
            azimuth_step_deg=self.azimuth_step_deg,
            range_resolution=range_res,
            azimuth_resolution_deg=azimuth_res_deg,
            noise_var=self.noise_var,
            doppler_limits=None if self.doppler_limits is None else tuple(self.doppler_limits),
            doppler_step=self.doppler_step,
            doppler_resolution=doppler_res,
        )


@dataclass
class ScenarioConfig:
    """Truth scenario and sensor. Target ids are 1-based positions in ``birth_schedule``."""

    K: int = 24
    dt: float = 1.0
    birth_schedule: list = field(default_factory=lambda: [
        [3, [1260.0, -11.0, 1240.0, -9.0]],
        [1, [1250.0, -10.0, 1250.0, -10.0]],
        [5, [1240.0, -9.0, 1260.0, -11.0]],
    ])
    death_schedule: list = field(default_factory=lambda: [[15, 1], [20, 3], [24, 2]])
    snr_db: float = 10.0
    grid: GridSpec = field(default_factory=GridSpec)
    range_res: float = 10.0
    azimuth_res_deg: float = 1.0
    doppler_res: float = 1.0
    a_max: float = 1.0
    truth_accel_psd: float = 0.0
    phase_mode: str = "per_target"
    gate_cells: int = 3
    birth_mean: tuple = (1250.0, -5.0, 1250.0, -5.0)
    birth_cov_diag: tuple = (7.5**2, 10.0**2, 7.5**2, 10.0**2)
    p_birth: float = 0.05
    p_survive: float = 0.95

    def validate(self) -> None:
        if self.K < 1 or self.dt <= 0:
            raise ConfigError("K must be >= 1 and dt > 0")
        ids = set()
        for i, entry in enumerate(self.birth_schedule, start=1):
            t, x = entry
            if not 1 <= int(t) <= self.K:
                raise ConfigError(f"birth time {t} of target {i} outside [1, {self.K}]")
            if len(x) != 4:
                raise ConfigError(f"target {i} initial state must have 4 components")
            ids.add(i)
        seen = set()
        for t, tid in self.death_schedule:
            if tid not in ids:
                raise ConfigError(f"death of unknown target {tid}")
            if tid in seen:
                raise ConfigError(f"target {tid} dies twice")
            seen.add(tid)
            if not 1 <= int(t) <= self.K:
                raise ConfigError(f"death time {t} of target {tid} outside [1, {self.K}]")
            if int(t) <= int(self.birth_schedule[tid - 1][0]):
                raise ConfigError(f"target {tid} dies at or before its birth")
        if self.phase_mode not in ("per_target", "common"):
            raise ConfigError(f"unknown phase mode {self.phase_mode!r}")
        grid = self.sensor_grid()
        r_lo, r_hi = grid.range_centroids[[0, -1]]
        b_lo, b_hi = grid.azimuth_centroids[[0, -1]]
        for i, (_, x) in enumerate(self.birth_schedule, start=1):
            r, b = np.hypot(x[0], x[2]), np.arctan2(x[2], x[0])
            if not (r_lo <= r <= r_hi and b_lo <= b <= b_hi):
                raise ConfigError(f"target {i} starts outside the sensor grid")

    def sensor_grid(self) -> SensorGrid:
        return self.grid.build(self.range_res, self.azimuth_res_deg, self.doppler_res)

    def sensor(self) -> RadarSensor:
        grid = self.sensor_grid()
        return RadarSensor(grid, amplitude_from_snr(self.snr_db, grid.noise_var), self.gate_cells, self.phase_mode)

    def lifetimes(self) -> dict[int, tuple[int, int]]:
        """target id -> (birth time, death time); death K+1 if the target never dies."""
        deaths = {int(tid): int(t) for t, tid in self.death_schedule}
        return {i: (int(t), deaths.get(i, self.K + 1)) for i, (t, _) in enumerate(self.birth_schedule, start=1)}


@dataclass
class RunConfig:
    proposal: str = "vovo"
    n_particles: int = 3000
    n_birth_particles: int = 5000
    seed: int = 0
    mc_runs: int = 50
    vovo_weight_mode: str = "single"
    clamps: Clamps = field(default_factory=Clamps)
    sigma_n: float | None = 8.0
    accel_noise_psd: float = 20.0
    cov_floor: tuple = (1.0, 0.25, 1.0, 0.25)
    n_max: int = 11
    ospa: OspaParams = field(default_factory=OspaParams)
    workers: int = 1

    def validate(self) -> None:
        if self.proposal not in PROPOSALS:
            raise ConfigError(f"proposal must be one of {PROPOSALS}")
        if self.vovo_weight_mode not in VOVO_WEIGHT_MODES:
            raise ConfigError(f"vovo_weight_mode must be one of {VOVO_WEIGHT_MODES}")
        if self.n_particles < 1 or self.mc_runs < 1 or self.workers < 1:
            raise ConfigError("n_particles, mc_runs and workers must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.sigma_n is not None and self.sigma_n <= 0:
            raise ConfigError("sigma_n must be positive")
        if self.accel_noise_psd < 0:
            raise ConfigError("accel_noise_psd must be nonnegative")

    def tracker_config(self, scenario: ScenarioConfig) -> TrackerConfig:
        return TrackerConfig(
            n_particles=self.n_particles,
            proposal=self.proposal,
            vovo_weight_mode=self.vovo_weight_mode,
            p_survive=scenario.p_survive,
            p_birth=scenario.p_birth,
            birth_mean=tuple(scenario.birth_mean),
            birth_cov_diag=tuple(scenario.birth_cov_diag),
            n_birth_particles=self.n_birth_particles,
            sigma_n=self.sigma_n,
            n_max=self.n_max,
            clamps=self.clamps,
            cov_floor=tuple(self.cov_floor),
        )

    def motion(self, scenario: ScenarioConfig):
        return build_ncv(scenario.dt, self.accel_noise_psd)


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def _from_dict(cls, d: dict, nested: dict):
    if not isinstance(d, dict):
        raise ConfigError(f"{cls.__name__} must be a JSON object")
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = {}
    for k, v in d.items():
        if k in nested and v is not None:
            kw[k] = _from_dict(nested[k], v, {})
        elif isinstance(v, list) and k not in ("birth_schedule", "death_schedule"):
            kw[k] = tuple(v)
        else:
            kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _tuples_to_lists(obj):
    if isinstance(obj, dict):
        return {k: _tuples_to_lists(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_tuples_to_lists(v) for v in obj]
    return obj


def config_to_dict(scenario: ScenarioConfig, run: RunConfig) -> dict:
    return _tuples_to_lists({"scenario": asdict(scenario), "run": asdict(run)})


def config_from_dict(d: dict) -> tuple[ScenarioConfig, RunConfig]:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(d) - {"scenario", "run"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    scenario = _from_dict(ScenarioConfig, d.get("scenario", {}), {"grid": GridSpec})
    run = _from_dict(RunConfig, d.get("run", {}), {"clamps": Clamps, "ospa": OspaParams})
    scenario.validate()
    run.validate()
    return scenario, run


def dumps_config(scenario: ScenarioConfig, run: RunConfig) -> str:
    return json.dumps(config_to_dict(scenario, run), indent=2, sort_keys=True)


def load_config(path) -> tuple[ScenarioConfig, RunConfig]:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(d)


def default_config() -> tuple[ScenarioConfig, RunConfig]:
    """The checked-in Table I scenario."""
    text = resources.files("suptrack").joinpath("scenario_default.json").read_text()
    return config_from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------


def generate_truth(scenario: ScenarioConfig, rng: np.random.Generator | None = None) -> list[LabeledSet]:
    """Truth sets for k = 1..K. Target i enters at its birth time at its initial
    state with label (birth time, i) and is absent from its death time on."""
    scenario.validate()
    motion = build_ncv(scenario.dt, scenario.truth_accel_psd)
    noisy = scenario.truth_accel_psd > 0
    if noisy and rng is None:
        raise ConfigError("noisy truth propagation needs an rng")
    life = scenario.lifetimes()
    current: dict[int, np.ndarray] = {}
    out = []
    for k in range(1, scenario.K + 1):
        for tid in list(current):
            current[tid] = motion.sample(current[tid], rng) if noisy else motion.F @ current[tid]
        for tid, (b, d) in life.items():
            if b == k:
                current[tid] = np.asarray(scenario.birth_schedule[tid - 1][1], dtype=float)
            if d == k:
                current.pop(tid, None)
        out.append(LabeledSet([LabeledState(current[t], Label(life[t][0], t)) for t in sorted(current)]))
    return out
