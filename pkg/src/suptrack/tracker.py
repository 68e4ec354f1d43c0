"""Labeled multi-target particle filter with SA-CPHD driven proposals."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .gaussian import Gaussian
from .proposals import (
    build_lmb,
    build_vovo,
    lmb_log_q_batch,
    lmb_sample_batch,
    vovo_log_q_batch,
    vovo_sample_batch,
)
from .rfs import NEG_INF, Label, LmbParams, ParticleArray, pairwise_transition_log_density
from .sacphd import Clamps, SaCphdFilter, SaCphdOutput

log = logging.getLogger(__name__)

PROPOSALS = ("lmb", "vovo", "transition")
VOVO_WEIGHT_MODES = ("single", "full")


class ParticleCollapse(RuntimeError):
    """Every importance weight is zero."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrackerConfig:
    n_particles: int = 3000
    proposal: str = "vovo"
    vovo_weight_mode: str = "single"
    p_survive: float = 0.95
    p_birth: float = 0.05
    birth_mean: tuple = (1250.0, -5.0, 1250.0, -5.0)
    birth_cov_diag: tuple = (7.5**2, 10.0**2, 7.5**2, 10.0**2)
    n_birth_labels: int = 1
    n_birth_particles: int = 5000
    n_survival_particles: int | None = None
    sigma_n: float | None = None
    n_max: int = 11
    clamps: Clamps = field(default_factory=Clamps)
    cov_floor: tuple = (1e-6,)
    match_mass: bool = True

    def __post_init__(self):
        if self.proposal not in PROPOSALS:
            raise ValueError(f"proposal must be one of {PROPOSALS}")
        if self.vovo_weight_mode not in VOVO_WEIGHT_MODES:
            raise ValueError(f"vovo_weight_mode must be one of {VOVO_WEIGHT_MODES}")
        if self.n_particles < 1:
            raise ValueError("n_particles must be positive")
        if len(self.birth_mean) != len(self.birth_cov_diag):
            raise ValueError("birth mean and covariance dimensions disagree")


@dataclass
class TrackerState:
    particles: ParticleArray
    weights: np.ndarray
    k: int = 0
    n_eff: float = float("nan")
    violations: int = 0
    no_compatible: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.particles.n_particles,):
            raise ValueError("one weight per particle required")


@dataclass
class TrackRecord:
    label: Label
    existence: float
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class TrackEstimate:
    n_hat: int
    tracks: list
    cardinality: np.ndarray

    def positions(self) -> np.ndarray:
        if not self.tracks:
            return np.zeros((0, 2))
        return np.array([[t.mean[0], t.mean[2]] for t in self.tracks])


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def systematic_resample(weights, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Indices chosen by systematic resampling; copy count of particle i is
    floor or ceil of n * w_i."""
    w = np.asarray(weights, dtype=float)
    n = w.size if n is None else n
    cum = np.cumsum(w)
    cum /= cum[-1]
    positions = (rng.random() + np.arange(n)) / n
    return np.minimum(np.searchsorted(cum, positions, side="right"), w.size - 1)


def resample(particles: ParticleArray, weights, rng: np.random.Generator) -> tuple[ParticleArray, np.ndarray]:
    idx = systematic_resample(weights, rng)
    n = idx.size
    return particles.take(idx).pruned(), np.full(n, 1.0 / n)


def estimate(state: TrackerState) -> TrackEstimate:
    """MAP cardinality, then the labels with the highest existence score."""
    parts, w = state.particles, state.weights / state.weights.sum()
    card = np.bincount(parts.cardinalities(), weights=w, minlength=1)
    n_hat = int(np.argmax(card))
    exist = w @ parts.exists if parts.labels else np.zeros(0)
    order = sorted(range(len(parts.labels)), key=lambda j: (-exist[j], parts.labels[j]))[:n_hat]
    tracks = []
    for j in sorted(order, key=lambda j: parts.labels[j]):
        sel = parts.exists[:, j]
        ww = w[sel] / w[sel].sum()
        x = parts.states[sel, j]
        mean = ww @ x
        dx = x - mean
        tracks.append(TrackRecord(parts.labels[j], float(exist[j]), mean, (dx * ww[:, None]).T @ dx))
    return TrackEstimate(n_hat, tracks, card)


def birth_model(k: int, config: TrackerConfig) -> LmbParams:
    dens = Gaussian(config.birth_mean, np.diag(config.birth_cov_diag))
    return LmbParams({Label(k, i): (config.p_birth, dens) for i in range(config.n_birth_labels)})


def sample_transition_batch(prev: ParticleArray, p_survive: float, motion, birth: LmbParams,
                            rng: np.random.Generator) -> ParticleArray:
    """Draw X_k ~ f(. | X_{k-1}) for every particle.

    Draw order: survival uniforms (N, L), motion normals (N, L, d), birth
    uniforms (N, B), birth normals (N, B, d).
    """
    n, L, d = prev.n_particles, len(prev.labels), prev.dim
    u = rng.random((n, L))
    eps = rng.standard_normal((n, L, d))
    blabs = birth.labels
    ub = rng.random((n, len(blabs)))
    epsb = rng.standard_normal((n, len(blabs), d))
    exists_s = prev.exists & (u < p_survive)
    states_s = np.where(exists_s[..., None], motion.propagate(prev.states, eps), 0.0)
    exists_b = np.zeros((n, len(blabs)), bool)
    states_b = np.zeros((n, len(blabs), d))
    for j, lab in enumerate(blabs):
        r, dens = birth.components[lab]
        exists_b[:, j] = ub[:, j] < r
        states_b[exists_b[:, j], j] = dens.transform(epsb[exists_b[:, j], j])
    out = ParticleArray(prev.labels + blabs, np.hstack([exists_s, exists_b]), np.concatenate([states_s, states_b], axis=1))
    return out


def _finish(state: TrackerState, new: ParticleArray, log_w: np.ndarray, rng, k: int, violations: int = 0,
            no_compatible: int = 0) -> TrackerState:
    if not np.any(np.isfinite(log_w)):
        raise ParticleCollapse(
            f"particle collapse at k={k}: all importance weights are zero",
            {"k": k, "n_particles": new.n_particles, "violations": violations, "no_compatible": no_compatible},
        )
    w = np.exp(log_w - special.logsumexp(log_w))
    n_eff = effective_sample_size(w)
    particles, weights = resample(new, w, rng)
    return TrackerState(particles, weights, k, n_eff, violations, no_compatible)


def step_bootstrap(state: TrackerState, z, motion, sensor, config: TrackerConfig, rng: np.random.Generator) -> TrackerState:
    """Proposal equal to the transition density, so the weight update is w * g."""
    k = state.k + 1
    new = sample_transition_batch(state.particles, config.p_survive, motion, birth_model(k, config), rng)
    with np.errstate(divide="ignore"):
        log_w = np.log(state.weights) + sensor.log_likelihood_batch(z, new)
    return _finish(state, new, log_w, rng, k)


def step_lmb(state: TrackerState, z, cphd: SaCphdOutput, motion, sensor, config: TrackerConfig,
             rng: np.random.Generator) -> TrackerState:
    k = state.k + 1
    birth = birth_model(k, config)
    prev = state.particles
    prop = build_lmb(cphd.clusters)
    new = lmb_sample_batch(prop, prev, rng)
    idx = np.arange(prev.n_particles)
    log_f = pairwise_transition_log_density(prev, new, idx, idx, config.p_survive, motion.logpdf, birth)
    log_q = lmb_log_q_batch(prop, new, prev)
    ratio = log_f - log_q
    bad = ~np.isfinite(ratio)
    violations = int(bad.sum())
    if violations:
        log.warning("k=%d: %d LMB-proposed particles with non-finite f/q", k, violations)
    ratio[bad] = NEG_INF
    with np.errstate(divide="ignore"):
        log_w = np.log(state.weights) + sensor.log_likelihood_batch(z, new) + ratio
    return _finish(state, new, log_w, rng, k, violations)


def _compatible_choice(prev: ParticleArray, prev_w: np.ndarray, new: ParticleArray, birth_labels,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """For each proposed particle pick one previous particle whose labels contain
    its surviving labels, with probability proportional to the previous weight.

    Returns the chosen indices (-1 if none) and the log total weight of the
    compatible particles, so that exp(log_mass) * f(X | X_m) estimates the
    weighted sum of f over all previous particles without bias.
    """
    universe = sorted(set(prev.labels) | set(new.labels))
    P = prev.reindex(universe).exists
    S = new.reindex(universe).exists & ~np.array([lab in set(birth_labels) for lab in universe], bool)[None, :]
    pat_p, inv_p = np.unique(P, axis=0, return_inverse=True)
    pat_s, inv_s = np.unique(S, axis=0, return_inverse=True)
    inv_p, inv_s = inv_p.ravel(), inv_s.ravel()
    compat = ~np.any(pat_s[:, None, :] & ~pat_p[None, :, :], axis=2)  # (n_s, n_p)
    choice = np.full(new.n_particles, -1)
    log_mass = np.full(new.n_particles, NEG_INF)
    u = rng.random(new.n_particles)
    for s in range(pat_s.shape[0]):
        members = np.flatnonzero(inv_s == s)
        cand = np.flatnonzero(compat[s][inv_p])
        if cand.size == 0:
            continue
        cw = np.cumsum(prev_w[cand])
        total = cw[-1]
        pick = np.minimum(np.searchsorted(cw, u[members] * total, side="right"), cand.size - 1)
        choice[members] = cand[pick]
        log_mass[members] = np.log(total)
    return choice, log_mass


def step_vovo(state: TrackerState, z, cphd: SaCphdOutput, motion, sensor, config: TrackerConfig,
              rng: np.random.Generator) -> TrackerState:
    k = state.k + 1
    birth = birth_model(k, config)
    prev = state.particles
    universe = set(prev.labels) | set(birth.labels)
    prop = build_vovo(cphd.card, cphd.clusters, universe)
    n = config.n_particles
    new = vovo_sample_batch(prop, n, prev.dim, rng)
    log_q = vovo_log_q_batch(prop, new)
    prev_w = state.weights / state.weights.sum()
    no_compat = 0
    if config.vovo_weight_mode == "single":
        choice, log_mass = _compatible_choice(prev, prev_w, new, birth.labels, rng)
        ok = choice >= 0
        no_compat = int((~ok).sum())
        if no_compat:
            log.info("k=%d: %d proposed particles without a compatible predecessor", k, no_compat)
        log_sum = np.full(n, NEG_INF)
        if ok.any():
            lf = pairwise_transition_log_density(prev, new, choice[ok], np.flatnonzero(ok), config.p_survive,
                                                 motion.logpdf, birth)
            log_sum[ok] = log_mass[ok] + lf
    else:
        log_sum = _full_sum_log_transition(prev, prev_w, new, config.p_survive, motion, birth)
    with np.errstate(invalid="ignore"):
        log_w = sensor.log_likelihood_batch(z, new) + log_sum - log_q
    log_w[~np.isfinite(log_w)] = NEG_INF
    return _finish(state, new, log_w, rng, k, 0, no_compat)


def _full_sum_log_transition(prev: ParticleArray, prev_w, new: ParticleArray, p_survive, motion, birth,
                             chunk: int = 200_000) -> np.ndarray:
    """log sum_j w_j f(new_i | prev_j) for every i (quadratic cost)."""
    n_new, n_prev = new.n_particles, prev.n_particles
    with np.errstate(divide="ignore"):
        log_pw = np.log(prev_w)
    out = np.empty(n_new)
    rows_per = max(1, chunk // n_prev)
    for start in range(0, n_new, rows_per):
        i = np.arange(start, min(n_new, start + rows_per))
        ii = np.repeat(i, n_prev)
        jj = np.tile(np.arange(n_prev), i.size)
        lf = pairwise_transition_log_density(prev, new, jj, ii, p_survive, motion.logpdf, birth)
        out[i] = special.logsumexp((lf + log_pw[jj]).reshape(i.size, n_prev), axis=1)
    return out


class MultiTargetParticleFilter:
    """Runs the SA-CPHD on the current particles, builds the configured
    proposal and advances the multi-target particle set by one scan."""

    def __init__(self, motion, sensor, config: TrackerConfig):
        self.motion = motion
        self.sensor = sensor
        self.config = config
        self.cphd = SaCphdFilter(
            motion=motion,
            sensor=sensor,
            p_survive=config.p_survive,
            n_birth=config.n_birth_particles,
            n_survival=config.n_survival_particles,
            sigma_n=config.sigma_n,
            n_max=config.n_max,
            clamps=config.clamps,
            cov_floor=np.broadcast_to(np.asarray(config.cov_floor, float), (motion.state_dim,)),
            match_mass=config.match_mass,
        )
        self.last_cphd: SaCphdOutput | None = None

    def initial_state(self) -> TrackerState:
        n = self.config.n_particles
        return TrackerState(ParticleArray.empty(n, self.motion.state_dim), np.full(n, 1.0 / n), 0)

    def step(self, state: TrackerState, z, rng: np.random.Generator) -> TrackerState:
        cfg = self.config
        if cfg.proposal == "transition":
            return step_bootstrap(state, z, self.motion, self.sensor, cfg, rng)
        birth = birth_model(state.k + 1, cfg)
        self.last_cphd = self.cphd.step(state.particles, state.weights, z, birth, rng)
        if cfg.proposal == "lmb":
            return step_lmb(state, z, self.last_cphd, self.motion, self.sensor, cfg, rng)
        return step_vovo(state, z, self.last_cphd, self.motion, self.sensor, cfg, rng)
