"""Radar power-return sensor on a range-azimuth(-Doppler) grid.

Cells are flattened in C order over ``(range, azimuth[, doppler])``.
Target amplitudes are real; the random echo phase only enters the simulator.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

from .rfs import LabeledSet, ParticleArray

DEFAULT_GATE = 3


@dataclass(frozen=True, eq=False)
class SensorGrid:
    range_centroids: np.ndarray
    azimuth_centroids: np.ndarray
    range_var: float
    azimuth_var: float
    noise_var: float = 1.0
    doppler_centroids: np.ndarray | None = None
    doppler_var: float = 1.0

    def __post_init__(self):
        for name in ("range_centroids", "azimuth_centroids", "doppler_centroids"):
            val = getattr(self, name)
            if val is None:
                continue
            arr = np.array(val, dtype=float)
            if arr.ndim != 1 or arr.size == 0 or np.any(np.diff(arr) <= 0):
                raise ValueError(f"{name} must be a nonempty strictly increasing vector")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not self.noise_var > 0:
            raise ValueError("noise variance must be positive")
        if min(self.range_var, self.azimuth_var, self.doppler_var) <= 0:
            raise ValueError("resolution constants must be positive")

    @classmethod
    def regular(
        cls,
        range_limits=(1000.0, 2000.0),
        range_step=10.0,
        azimuth_limits_deg=(30.0, 60.0),
        azimuth_step_deg=1.0,
        range_resolution=10.0,
        azimuth_resolution_deg=1.0,
        noise_var=1.0,
        doppler_limits=None,
        doppler_step=1.0,
        doppler_resolution=1.0,
    ) -> "SensorGrid":
        """Uniform grid; PSF variances are the squared resolutions."""

        def axis(lo, hi, step):
            n = int(round((hi - lo) / step)) + 1
            return lo + step * np.arange(n)

        dop = None if doppler_limits is None else axis(*doppler_limits, doppler_step)
        return cls(
            range_centroids=axis(*range_limits, range_step),
            azimuth_centroids=np.deg2rad(axis(*azimuth_limits_deg, azimuth_step_deg)),
            range_var=range_resolution**2,
            azimuth_var=np.deg2rad(azimuth_resolution_deg) ** 2,
            noise_var=noise_var,
            doppler_centroids=dop,
            doppler_var=doppler_resolution**2,
        )

    @property
    def has_doppler(self) -> bool:
        return self.doppler_centroids is not None

    @property
    def shape(self) -> tuple[int, ...]:
        s = (self.range_centroids.size, self.azimuth_centroids.size)
        return s + (self.doppler_centroids.size,) if self.has_doppler else s

    @property
    def m(self) -> int:
        return int(np.prod(self.shape))

    def cell_centroids(self, cells) -> tuple[np.ndarray, ...]:
        idx = np.unravel_index(np.asarray(cells), self.shape)
        out = (self.range_centroids[idx[0]], self.azimuth_centroids[idx[1]])
        return out + (self.doppler_centroids[idx[2]],) if self.has_doppler else out

    def to_dict(self) -> dict:
        d = {
            "range_centroids": self.range_centroids.tolist(),
            "azimuth_centroids": self.azimuth_centroids.tolist(),
            "range_var": self.range_var,
            "azimuth_var": self.azimuth_var,
            "noise_var": self.noise_var,
            "doppler_var": self.doppler_var,
        }
        d["doppler_centroids"] = None if not self.has_doppler else self.doppler_centroids.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SensorGrid":
        return cls(**d)


@dataclass(frozen=True)
class PowerMeasurement:
    values: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if np.any(v < 0):
            raise ValueError("power values must be nonnegative")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class TargetTemplate:
    cell_indices: np.ndarray


def amplitude_from_snr(snr_db: float, noise_var: float = 1.0) -> float:
    """Amplitude giving SNR = 10 log10(A^2 / (2 noise_var))."""
    return float(np.sqrt(2.0 * noise_var * 10.0 ** (snr_db / 10.0)))


def log_i0(u) -> np.ndarray:
    """log I0(u) without overflow for large arguments."""
    u = np.asarray(u, dtype=float)
    return np.log(special.i0e(u)) + np.abs(u)


def measurement_coords(x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Range, azimuth and range-rate of kinematic states (p_x, v_x, p_y, v_y, ...)."""
    x = np.asarray(x, dtype=float)
    px, vx, py, vy = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    r = np.hypot(px, py)
    b = np.arctan2(py, px)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.where(r > 0, (px * vx + py * vy) / r, 0.0)
    return r, b, d


def _nearest(centroids: np.ndarray, v: np.ndarray) -> np.ndarray:
    n = centroids.size
    if n == 1:
        return np.zeros(v.shape, int)
    hi = np.clip(np.searchsorted(centroids, v), 1, n - 1)
    lo = hi - 1
    return np.where(np.abs(v - centroids[lo]) <= np.abs(centroids[hi] - v), lo, hi)


def template_psf(grid: SensorGrid, states, gate_cells: int = DEFAULT_GATE) -> tuple[np.ndarray, np.ndarray]:
    """Template cells and PSF values for states of shape (..., d).

    Returns ``(cells, h)`` of shape (..., T) with T = (2 gate + 1)^axes;
    entries clipped off the grid have cell -1 and h = 0.
    """
    states = np.asarray(states, dtype=float)
    lead = states.shape[:-1]
    r, b, d = measurement_coords(states.reshape(-1, states.shape[-1]))
    offs = np.arange(-gate_cells, gate_cells + 1)
    axes = [(grid.range_centroids, r, grid.range_var), (grid.azimuth_centroids, b, grid.azimuth_var)]
    if grid.has_doppler:
        axes.append((grid.doppler_centroids, d, grid.doppler_var))
    n = r.shape[0]
    cells = np.zeros((n, 1), int)
    h = np.ones((n, 1))
    valid = np.ones((n, 1), bool)
    for cent, val, var in axes:
        idx = _nearest(cent, val)[:, None] + offs
        ok = (idx >= 0) & (idx < cent.size)
        c = cent[np.clip(idx, 0, cent.size - 1)]
        fac = np.exp(-((c - val[:, None]) ** 2) / (2.0 * var))
        cells = (cells[:, :, None] * cent.size + idx[:, None, :]).reshape(n, -1)
        h = (h[:, :, None] * fac[:, None, :]).reshape(n, -1)
        valid = (valid[:, :, None] & ok[:, None, :]).reshape(n, -1)
    cells = np.where(valid, cells, -1)
    h = np.where(valid, h, 0.0)
    T = cells.shape[1]
    return cells.reshape(lead + (T,)), h.reshape(lead + (T,))


def template(grid: SensorGrid, x, gate_cells: int = DEFAULT_GATE) -> TargetTemplate:
    cells, _ = template_psf(grid, np.asarray(x, dtype=float)[None], gate_cells)
    c = cells[0]
    return TargetTemplate(np.sort(c[c >= 0]))


def psf(grid: SensorGrid, x, gate_cells: int = DEFAULT_GATE) -> dict[int, float]:
    """Point-spread function on the target template, as ``{cell: h}``."""
    cells, h = template_psf(grid, np.asarray(x, dtype=float)[None], gate_cells)
    return {int(c): float(v) for c, v in zip(cells[0], h[0]) if c >= 0}


def _amplitudes(amplitude, states: np.ndarray) -> np.ndarray:
    if callable(amplitude):
        return np.asarray([amplitude(x) for x in states], dtype=float)
    return np.full(states.shape[0], float(amplitude))


def _set_states(X) -> np.ndarray:
    if isinstance(X, LabeledSet):
        return X.states(4)
    return np.asarray(X, dtype=float).reshape(-1, 4) if len(X) == 0 else np.asarray(X, dtype=float)


def _coherent_sum(grid: SensorGrid, states: np.ndarray, amps: np.ndarray, gate_cells: int, phases=None):
    out = np.zeros(grid.m, dtype=complex if phases is not None else float)
    if states.shape[0] == 0:
        return out, np.zeros(0, int)
    cells, h = template_psf(grid, states, gate_cells)
    contrib = amps[:, None] * h
    if phases is not None:
        contrib = contrib * np.exp(1j * phases)[:, None]
    ok = cells >= 0
    np.add.at(out, cells[ok], contrib[ok])
    return out, np.unique(cells[ok])


def deterministic_signal(grid: SensorGrid, X, amplitude, gate_cells: int = DEFAULT_GATE) -> np.ndarray:
    """Noise-free cell power |sum_x A_x h(x)|^2 over all m cells."""
    states = _set_states(X)
    s, _ = _coherent_sum(grid, states, _amplitudes(amplitude, states), gate_cells)
    return s**2


def simulate_measurement(
    grid: SensorGrid,
    X,
    amplitude,
    rng: np.random.Generator,
    gate_cells: int = DEFAULT_GATE,
    phase_mode: str = "per_target",
    time_index: int = 0,
) -> PowerMeasurement:
    """Draw one scan of cell powers |sum_x A_x e^{j theta} h(x) + w|^2.

    ``phase_mode`` is ``"per_target"`` (one phase per target per scan) or
    ``"common"`` (one phase shared by all targets). Noise real and imaginary
    parts each have variance ``grid.noise_var``.
    """
    states = _set_states(X)
    n = states.shape[0]
    if phase_mode == "per_target":
        phases = rng.uniform(0.0, 2.0 * np.pi, size=n)
    elif phase_mode == "common":
        phases = np.full(n, rng.uniform(0.0, 2.0 * np.pi))
    else:
        raise ValueError(f"unknown phase mode {phase_mode!r}")
    s, _ = _coherent_sum(grid, states, _amplitudes(amplitude, states), gate_cells, phases)
    sd = np.sqrt(grid.noise_var)
    w = sd * rng.standard_normal(grid.m) + 1j * sd * rng.standard_normal(grid.m)
    return PowerMeasurement(np.abs(s + w) ** 2, time_index)


def log_likelihood_ratio_cells(z, zhat, noise_var: float = 1.0) -> np.ndarray:
    """Per-cell log of exp(-zhat / 2s) I0(sqrt(z zhat) / s), s = noise_var."""
    z = np.asarray(z, dtype=float)
    zhat = np.asarray(zhat, dtype=float)
    return -0.5 * zhat / noise_var + log_i0(np.sqrt(z * zhat) / noise_var)


def log_likelihood(grid: SensorGrid, z, X, amplitude, gate_cells: int = DEFAULT_GATE) -> float:
    """Sum of per-cell log likelihood ratios over the union of target templates."""
    values = z.values if isinstance(z, PowerMeasurement) else np.asarray(z, dtype=float)
    if values.shape != (grid.m,):
        raise ValueError("measurement does not match grid")
    states = _set_states(X)
    s, cells = _coherent_sum(grid, states, _amplitudes(amplitude, states), gate_cells)
    if cells.size == 0:
        return 0.0
    return float(np.sum(log_likelihood_ratio_cells(values[cells], s[cells] ** 2, grid.noise_var)))


def gamma_map(grid: SensorGrid, x, amplitude, gate_cells: int = DEFAULT_GATE) -> np.ndarray:
    """Additive power contribution A^2 h^2 of one target, as a length-m vector."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(grid.m)
    cells, h = template_psf(grid, x[None], gate_cells)
    a = _amplitudes(amplitude, x[None])[0]
    ok = cells[0] >= 0
    out[cells[0][ok]] = a**2 * h[0][ok] ** 2
    return out


class RadarSensor:
    """Radar measurement model bound to a grid and amplitude law.

    ``amplitude`` is a constant, or ``None`` to read the amplitude modulus from
    state component 4.
    """

    def __init__(self, grid: SensorGrid, amplitude: float | None, gate_cells: int = DEFAULT_GATE,
                 phase_mode: str = "per_target"):
        self.grid = grid
        self.amplitude = amplitude
        self.gate_cells = gate_cells
        self.phase_mode = phase_mode

    @property
    def m(self) -> int:
        return self.grid.m

    @property
    def noise_floor(self) -> float:
        return 2.0 * self.grid.noise_var

    def default_sigma_n(self) -> float:
        return 2.0 * self.grid.noise_var

    def amplitudes(self, states: np.ndarray) -> np.ndarray:
        if self.amplitude is None:
            return np.abs(states[..., 4])
        return np.full(states.shape[:-1], float(self.amplitude))

    def amplitude_fn(self) -> Callable:
        if self.amplitude is None:
            return lambda x: abs(x[4])
        return self.amplitude

    def simulate(self, X, rng, time_index: int = 0) -> PowerMeasurement:
        return simulate_measurement(self.grid, X, self.amplitude_fn(), rng, self.gate_cells, self.phase_mode, time_index)

    def log_likelihood(self, z, X) -> float:
        return log_likelihood(self.grid, z, X, self.amplitude_fn(), self.gate_cells)

    def preprocess(self, z) -> np.ndarray:
        """Remove the mean noise power so the additive model sees zero-mean noise."""
        values = z.values if isinstance(z, PowerMeasurement) else np.asarray(z, dtype=float)
        return values - self.noise_floor

    def gamma_sparse(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(cells, A^2 h^2) per state; off-grid template slots have value 0."""
        cells, h = template_psf(self.grid, states, self.gate_cells)
        vals = (self.amplitudes(states)[..., None] * h) ** 2
        return np.where(cells >= 0, cells, 0), vals

    def log_likelihood_batch(self, z, particles: ParticleArray) -> np.ndarray:
        """Log likelihood ratio of every multi-target particle."""
        values = z.values if isinstance(z, PowerMeasurement) else np.asarray(z, dtype=float)
        n = particles.n_particles
        rows, cols = np.nonzero(particles.exists)
        if rows.size == 0:
            return np.zeros(n)
        st = particles.states[rows, cols]
        cells, h = template_psf(self.grid, st, self.gate_cells)
        amp = self.amplitudes(st)[:, None] * h
        ok = cells >= 0
        m = self.grid.m
        key = (rows[:, None] * m + cells)[ok]
        uniq, inv = np.unique(key, return_inverse=True)
        zhat = np.bincount(inv, weights=amp[ok], minlength=uniq.size) ** 2
        cell = uniq % m
        ll = log_likelihood_ratio_cells(values[cell], zhat, self.grid.noise_var)
        return np.bincount(uniq // m, weights=ll, minlength=n)


# ---------------------------------------------------------------------------
# Measurement dump
# ---------------------------------------------------------------------------

MEASUREMENT_HEADER = ("k", "cell_index", "range_centroid", "azimuth_centroid", "power")


def write_measurements_csv(path, grid: SensorGrid, scans: Iterable[PowerMeasurement]) -> None:
    cells = np.arange(grid.m)
    rc, bc = grid.cell_centroids(cells)[:2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MEASUREMENT_HEADER)
        for scan in scans:
            for c in cells:
                w.writerow((scan.time_index, int(c), repr(float(rc[c])), repr(float(bc[c])), repr(float(scan.values[c]))))


def read_measurements_csv(path, grid: SensorGrid) -> list[PowerMeasurement]:
    by_k: dict[int, np.ndarray] = {}
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if tuple(r.fieldnames or ()) != MEASUREMENT_HEADER:
            raise ValueError(f"unexpected measurement header {r.fieldnames}")
        for row in r:
            k = int(row["k"])
            arr = by_k.setdefault(k, np.zeros(grid.m))
            arr[int(row["cell_index"])] = float(row["power"])
    return [PowerMeasurement(by_k[k], k) for k in sorted(by_k)]


def write_grid_json(path, grid: SensorGrid) -> None:
    Path(path).write_text(json.dumps(grid.to_dict(), indent=2))


def read_grid_json(path) -> SensorGrid:
    return SensorGrid.from_dict(json.loads(Path(path).read_text()))
