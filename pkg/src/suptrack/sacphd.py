"""Superpositional-approximate CPHD filter in particle (SMC) form.

The PHD cloud carries track labels, so after the update it splits into
per-label clusters that feed the tracker's proposal distributions.

Gaussian densities of the update live on the cells touched by at least one
particle's contribution; every other cell has zero mean and identical noise
covariance in numerator and denominator, so it cancels from all ratios. All
required covariances share the eigenbasis of ``Sigma_hat - mu mu^T`` up to a
rank-one term in ``mu``, which is handled with the determinant lemma and
Sherman-Morrison.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import sparse, special, stats

from .gaussian import LOG_2PI, Gaussian
from .rfs import Label, LmbParams, ParticleArray


@dataclass(frozen=True)
class CardinalityDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).ravel()
        if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("cardinality probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"cardinality probabilities sum to {p.sum()!r}, not 1")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @classmethod
    def normalized(cls, weights) -> "CardinalityDistribution":
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum())

    @classmethod
    def delta(cls, n: int, n_max: int) -> "CardinalityDistribution":
        p = np.zeros(n_max + 1)
        p[n] = 1.0
        return cls(p)

    @classmethod
    def poisson(cls, lam: float, n_max: int) -> "CardinalityDistribution":
        return cls.normalized(stats.poisson.pmf(np.arange(n_max + 1), lam))

    @classmethod
    def from_particles(cls, cardinalities, weights, n_max: int) -> "CardinalityDistribution":
        card = np.asarray(cardinalities, int)
        if card.size and card.max() > n_max:
            raise ValueError("particle cardinality exceeds n_max")
        return cls.normalized(np.bincount(card, weights=np.asarray(weights, float), minlength=n_max + 1))

    @property
    def n_max(self) -> int:
        return self.probs.size - 1

    @property
    def mean(self) -> float:
        return float(np.arange(self.probs.size) @ self.probs)

    @property
    def variance(self) -> float:
        n = np.arange(self.probs.size)
        return float(n**2 @ self.probs - self.mean**2)

    def factorial_moment(self, order: int) -> float:
        """G^(order)(1) = E[n (n-1) ... (n-order+1)]."""
        n = np.arange(self.probs.size, dtype=float)
        return float(special.poch(n - order + 1, order) @ self.probs)

    def map(self) -> int:
        return int(np.argmax(self.probs))


def thin_cardinality(probs, p_survive: float) -> np.ndarray:
    """Binomial thinning: each of n objects survives independently."""
    probs = np.asarray(probs, dtype=float)
    n = np.arange(probs.size)
    kernel = stats.binom.pmf(n[None, :], n[:, None], p_survive)  # rows: n, cols: j
    return probs @ kernel


def bernoulli_sum_cardinality(existence: Sequence[float], n_max: int) -> np.ndarray:
    """Poisson-binomial distribution of the number of existing components."""
    out = np.zeros(n_max + 1)
    out[0] = 1.0
    for r in existence:
        out[1:] = out[1:] * (1.0 - r) + out[:-1] * r
        out[0] *= 1.0 - r
    return out


def predict_cardinality(card: CardinalityDistribution, p_survive: float, birth_existence: Sequence[float]) -> CardinalityDistribution:
    n_max = card.n_max
    surv = thin_cardinality(card.probs, p_survive)
    born = bernoulli_sum_cardinality(birth_existence, n_max)
    return CardinalityDistribution.normalized(np.convolve(surv, born)[: n_max + 1])


@dataclass(frozen=True, eq=False)
class PhdParticleCloud:
    """Label-tagged weighted samples of the PHD; weights kept in log domain."""

    states: np.ndarray  # (n, d)
    log_weights: np.ndarray  # (n,)
    labels: tuple[Label, ...]
    label_index: np.ndarray  # (n,) into labels

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float))
        object.__setattr__(self, "log_weights", np.asarray(self.log_weights, dtype=float))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "label_index", np.asarray(self.label_index, dtype=int))
        n = self.log_weights.shape[0]
        if self.states.shape[0] != n or self.label_index.shape != (n,):
            raise ValueError("cloud arrays disagree in length")

    @classmethod
    def empty(cls, dim: int) -> "PhdParticleCloud":
        return cls(np.zeros((0, dim)), np.zeros(0), (), np.zeros(0, int))

    @classmethod
    def from_weights(cls, states, weights, labels, label_index) -> "PhdParticleCloud":
        with np.errstate(divide="ignore"):
            return cls(states, np.log(np.asarray(weights, dtype=float)), labels, label_index)

    @classmethod
    def from_particles(cls, particles: ParticleArray, weights) -> "PhdParticleCloud":
        """PHD of a weighted multi-target particle set, one sample per target."""
        rows, cols = np.nonzero(particles.exists)
        w = np.asarray(weights, dtype=float)[rows]
        return cls.from_weights(particles.states[rows, cols], w, particles.labels, cols)

    def __len__(self) -> int:
        return self.log_weights.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def log_mass(self) -> float:
        if len(self) == 0:
            return float("-inf")
        return float(special.logsumexp(self.log_weights))

    @property
    def mass(self) -> float:
        return float(np.exp(self.log_mass))

    def label_masses(self) -> dict[Label, float]:
        out = {}
        for j, lab in enumerate(self.labels):
            sel = self.label_index == j
            if sel.any():
                out[lab] = float(np.exp(special.logsumexp(self.log_weights[sel])))
        return out

    def with_log_weights(self, log_weights) -> "PhdParticleCloud":
        return PhdParticleCloud(self.states, log_weights, self.labels, self.label_index)

    def resample_per_label(self, n: int, rng: np.random.Generator) -> "PhdParticleCloud":
        """Systematic resampling to ``n`` equal-weight samples per label, keeping each label's mass."""
        states, logw, index = [], [], []
        offsets = rng.random(len(self.labels))
        for j in range(len(self.labels)):
            sel = np.flatnonzero(self.label_index == j)
            if sel.size == 0:
                continue
            lw = self.log_weights[sel]
            log_mass = special.logsumexp(lw)
            if log_mass == float("-inf"):
                continue
            cum = np.cumsum(np.exp(lw - log_mass))
            pos = (offsets[j] + np.arange(n)) / n
            pick = sel[np.minimum(np.searchsorted(cum / cum[-1], pos, side="right"), sel.size - 1)]
            states.append(self.states[pick])
            logw.append(np.full(n, log_mass - np.log(n)))
            index.append(np.full(n, j))
        if not states:
            return PhdParticleCloud(np.zeros((0, self.dim)), np.zeros(0), self.labels, np.zeros(0, int))
        return PhdParticleCloud(np.concatenate(states), np.concatenate(logw), self.labels, np.concatenate(index))


def predict(
    card: CardinalityDistribution,
    cloud: PhdParticleCloud,
    p_survive: float,
    birth: LmbParams,
    n_birth: int,
    motion,
    rng: np.random.Generator,
) -> tuple[CardinalityDistribution, PhdParticleCloud]:
    """CPHD prediction with an LMB birth whose components are Gaussian.

    Survivors move through ``motion`` with weight scaled by ``p_survive``;
    each birth label contributes ``n_birth`` samples of total mass r.
    """
    card_pred = predict_cardinality(card, p_survive, [r for r, _ in birth.components.values()])

    labels = tuple(sorted(set(cloud.labels) | set(birth.labels)))
    pos = {lab: j for j, lab in enumerate(labels)}
    remap = np.array([pos[lab] for lab in cloud.labels], dtype=int)
    states = [motion.sample(cloud.states, rng)] if len(cloud) else []
    with np.errstate(divide="ignore"):
        logw = [cloud.log_weights + np.log(p_survive)]
    index = [remap[cloud.label_index] if len(cloud) else np.zeros(0, int)]
    for lab, (r, dens) in birth.components.items():
        if n_birth <= 0:
            break
        states.append(dens.sample(rng, n_birth))
        with np.errstate(divide="ignore"):
            logw.append(np.full(n_birth, np.log(r / n_birth)))
        index.append(np.full(n_birth, pos[lab]))
    if not states:
        return card_pred, PhdParticleCloud(np.zeros((0, cloud.dim)), np.zeros(0), labels, np.zeros(0, int))
    cloud_pred = PhdParticleCloud(np.concatenate(states), np.concatenate(logw), labels, np.concatenate(index))
    return card_pred, cloud_pred


@dataclass(frozen=True, eq=False)
class Moments:
    """Moments of the sensor contribution under the normalized predicted intensity,
    restricted to the active cells."""

    cells: np.ndarray  # active cell ids (m',)
    mu_hat: np.ndarray
    sigma_hat: np.ndarray
    N: float
    var: float
    G2: float
    G3: float

    @property
    def c2(self) -> float:
        return self.G2 / self.N if self.N > 0 else 0.0

    @property
    def c3(self) -> float:
        return self.G3 / self.N if self.N > 0 else 0.0

    @property
    def centered(self) -> np.ndarray:
        return self.sigma_hat - np.outer(self.mu_hat, self.mu_hat)

    def sigma_n(self, n: int) -> np.ndarray:
        return n * self.centered

    @property
    def sigma(self) -> np.ndarray:
        return self.N * self.sigma_hat + (self.var - self.N) * np.outer(self.mu_hat, self.mu_hat)

    @property
    def mu_o(self) -> np.ndarray:
        return self.c2 * self.mu_hat

    @property
    def sigma_o(self) -> np.ndarray:
        return self.c2 * self.sigma_hat + (self.c3 - self.c2**2) * np.outer(self.mu_hat, self.mu_hat)

    @cached_property
    def eig(self) -> tuple[np.ndarray, np.ndarray]:
        A = self.centered
        lam, V = np.linalg.eigh(0.5 * (A + A.T))
        return np.clip(lam, 0.0, None), V


def _active_gamma(cloud: PhdParticleCloud, sensor):
    cells, vals = sensor.gamma_sparse(cloud.states)
    cells = np.asarray(cells).reshape(len(cloud), -1)
    vals = np.asarray(vals, dtype=float).reshape(len(cloud), -1)
    nz = vals != 0
    active, loc = np.unique(np.where(nz, cells, -1), return_inverse=True)
    loc = loc.reshape(cells.shape)
    if active.size and active[0] == -1:
        active, loc = active[1:], loc - 1
    loc = np.where(nz, loc, 0)
    vals = np.where(nz, vals, 0.0)
    return active, loc, vals


def _moments(cloud: PhdParticleCloud, card: CardinalityDistribution, active, loc, vals) -> Moments:
    if len(cloud) == 0 or cloud.log_mass == float("-inf"):
        raise ValueError("moments require a cloud with positive mass")
    s = np.exp(cloud.log_weights - cloud.log_mass)
    m_act = active.size
    rows = np.repeat(np.arange(len(cloud)), loc.shape[1])
    G = sparse.csr_matrix((vals.ravel(), (rows, loc.ravel())), shape=(len(cloud), m_act))
    mu_hat = np.asarray(G.T @ s).ravel()
    sigma_hat = np.asarray((G.T @ G.multiply(s[:, None])).todense())
    return Moments(active, mu_hat, sigma_hat, card.mean, card.variance, card.factorial_moment(2), card.factorial_moment(3))


def moments(cloud: PhdParticleCloud, card: CardinalityDistribution, sensor) -> Moments:
    active, loc, vals = _active_gamma(cloud, sensor)
    return _moments(cloud, card, active, loc, vals)


def _rank1_gauss(D, V, b, beta, r):
    """log N(r; 0, V diag(D) V^T + beta b b^T) for residual(s) r in cell space."""
    y = r @ V
    u = V.T @ b
    ud = u / D
    denom = 1.0 + beta * (u @ ud)
    maha = np.sum(y * y / D, axis=-1) - beta * (y @ ud) ** 2 / denom
    logdet = np.sum(np.log(D)) + np.log(denom)
    return -0.5 * (D.size * LOG_2PI + logdet + maha)


def _precision(D, V, b, beta) -> tuple[np.ndarray, float]:
    """Inverse and log-determinant of V diag(D) V^T + beta b b^T."""
    Vd = V / D
    P = Vd @ V.T
    Pb = P @ b
    denom = 1.0 + beta * (b @ Pb)
    P = P - beta * np.outer(Pb, Pb) / denom
    return 0.5 * (P + P.T), float(np.sum(np.log(D)) + np.log(denom))


def update(
    card: CardinalityDistribution,
    cloud: PhdParticleCloud,
    z,
    sensor,
    sigma_n: float,
    match_mass: bool = True,
    chunk: int = 2048,
) -> tuple[CardinalityDistribution, PhdParticleCloud]:
    """SA-CPHD measurement update.

    ``z`` is the preprocessed (zero-mean-noise) measurement over all cells and
    ``sigma_n`` the standard deviation of the additive noise. With
    ``match_mass`` the updated particle weights are rescaled so the PHD mass
    equals the mean of the updated cardinality.
    """
    z = np.asarray(z, dtype=float)
    if len(cloud) == 0 or cloud.log_mass == float("-inf"):
        if card.probs[0] < 1.0 - 1e-12:
            raise ValueError("empty PHD cloud requires an empty-set cardinality")
        return CardinalityDistribution.delta(0, card.n_max), cloud
    active, loc, vals = _active_gamma(cloud, sensor)
    n = np.arange(card.n_max + 1)
    with np.errstate(divide="ignore"):
        log_prior = np.log(card.probs)
    if active.size == 0:
        return card, cloud

    mom = _moments(cloud, card, active, loc, vals)
    d = z[active]
    s2 = float(sigma_n) ** 2
    lam, V = mom.eig
    mu = mom.mu_hat
    y0, y1 = d @ V, mu @ V

    # cardinality: covariance s2 I + n A, mean n mu
    Dn = s2 + n[:, None] * lam[None, :]
    Y = y0[None, :] - n[:, None] * y1[None, :]
    log_lik_n = -0.5 * (active.size * LOG_2PI + np.sum(np.log(Dn), axis=1) + np.sum(Y * Y / Dn, axis=1))
    log_post = log_prior + log_lik_n
    log_post -= special.logsumexp(log_post)
    card_new = CardinalityDistribution.normalized(np.exp(log_post))

    # PHD: numerator s2 I + Sigma_o, denominator s2 I + Sigma
    N = mom.N
    log_den = _rank1_gauss(s2 + N * lam, V, mu, mom.var, d - N * mu)
    beta_o = mom.c2 + mom.c3 - mom.c2**2
    P, logdet_o = _precision(s2 + mom.c2 * lam, V, mu, max(beta_o, 0.0))
    e = d - mom.mu_o
    Pe = P @ e
    maha = np.empty(len(cloud))
    for start in range(0, len(cloud), chunk):
        sl = slice(start, start + chunk)
        lc, vc = loc[sl], vals[sl]
        quad = np.einsum("nt,nts,ns->n", vc, P[lc[:, :, None], lc[:, None, :]], vc)
        maha[sl] = e @ Pe - 2.0 * np.sum(vc * Pe[lc], axis=1) + quad
    log_num = -0.5 * (active.size * LOG_2PI + logdet_o + maha)
    logw = cloud.log_weights + (log_num - log_den)
    if match_mass:
        target = card_new.mean
        with np.errstate(divide="ignore"):
            logw = logw - special.logsumexp(logw) + np.log(target)
    return card_new, cloud.with_log_weights(logw)


@dataclass(frozen=True)
class Clamps:
    p_s_min: float = 0.1
    p_s_max: float = 0.99
    p_b_min: float = 0.01
    p_b_max: float = 0.99

    def clamp(self, mass: float, kind: str) -> float:
        if kind == "birth":
            return float(np.clip(mass, self.p_b_min, self.p_b_max))
        return float(np.clip(mass, self.p_s_min, self.p_s_max))


@dataclass(frozen=True, eq=False)
class GaussianCluster:
    label: Label
    mean: np.ndarray
    cov: np.ndarray
    mass: float
    kind: str  # "survival" | "birth"
    raw_mass: float = float("nan")

    @cached_property
    def density(self) -> Gaussian:
        return Gaussian(self.mean, self.cov)


def extract_clusters(
    cloud: PhdParticleCloud,
    birth_labels,
    clamps: Clamps = Clamps(),
    cov_floor=1e-6,
) -> list[GaussianCluster]:
    """Per-label Gaussian fit and clamped mass of the updated PHD."""
    birth_labels = set(birth_labels)
    floor = np.broadcast_to(np.asarray(cov_floor, dtype=float), (cloud.dim,))
    out = []
    for j, lab in enumerate(cloud.labels):
        sel = np.flatnonzero(cloud.label_index == j)
        if sel.size == 0:
            continue
        lw = cloud.log_weights[sel]
        log_mass = special.logsumexp(lw)
        if log_mass == float("-inf"):
            p = np.full(sel.size, 1.0 / sel.size)
        else:
            p = np.exp(lw - log_mass)
        x = cloud.states[sel]
        mean = p @ x
        dx = x - mean
        cov = (dx * p[:, None]).T @ dx
        cov = 0.5 * (cov + cov.T) + np.diag(floor)
        kind = "birth" if lab in birth_labels else "survival"
        raw = float(np.exp(log_mass))
        out.append(GaussianCluster(lab, mean, cov, clamps.clamp(raw, kind), kind, raw))
    return out


def diagnostic_record(k: int, card: CardinalityDistribution, clusters: Sequence[GaussianCluster]) -> dict:
    return {
        "k": k,
        "rho": card.probs.tolist(),
        "clusters": [
            {"label": str(c.label), "mass": c.mass, "mean": c.mean.tolist(), "cov_diag": np.diag(c.cov).tolist()}
            for c in clusters
        ],
    }


@dataclass
class SaCphdOutput:
    card_pred: CardinalityDistribution
    card: CardinalityDistribution
    cloud: PhdParticleCloud
    clusters: list[GaussianCluster] = field(default_factory=list)


@dataclass
class SaCphdFilter:
    """One SA-CPHD cycle seeded from the tracker's weighted multi-target particles."""

    motion: object
    sensor: object
    p_survive: float = 0.95
    n_birth: int = 5000
    n_survival: int | None = None  # PHD samples per surviving label; None keeps one per target
    sigma_n: float | None = None
    n_max: int = 11
    clamps: Clamps = field(default_factory=Clamps)
    cov_floor: object = 1e-6
    match_mass: bool = True

    def step(self, particles: ParticleArray, weights, z, birth: LmbParams, rng: np.random.Generator) -> SaCphdOutput:
        weights = np.asarray(weights, dtype=float)
        card = CardinalityDistribution.from_particles(particles.cardinalities(), weights, self.n_max)
        cloud = PhdParticleCloud.from_particles(particles, weights / weights.sum())
        if self.n_survival:
            cloud = cloud.resample_per_label(self.n_survival, rng)
        card_pred, cloud_pred = predict(card, cloud, self.p_survive, birth, self.n_birth, self.motion, rng)
        sigma_n = self.sigma_n if self.sigma_n is not None else self.sensor.default_sigma_n()
        card_post, cloud_post = update(card_pred, cloud_pred, self.sensor.preprocess(z), self.sensor, sigma_n, self.match_mass)
        clusters = extract_clusters(cloud_post, birth.labels, self.clamps, self.cov_floor)
        return SaCphdOutput(card_pred, card_post, cloud_post, clusters)
