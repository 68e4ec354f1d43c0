"""LMB and single-component Vo-Vo proposals built from SA-CPHD clusters.

Each proposal has a per-set API (``LabeledSet`` in, log-density out) and an
array API over a whole particle population used by the tracker. Both draw and
evaluate the same distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .rfs import NEG_INF, Label, LabeledSet, LabeledState, ParticleArray, elementary_symmetric
from .sacphd import CardinalityDistribution, GaussianCluster


def _log(v: float) -> float:
    return float(np.log(v)) if v > 0 else NEG_INF


def _log1m(v: float) -> float:
    return float(np.log1p(-v)) if v < 1 else NEG_INF


# ---------------------------------------------------------------------------
# LMB proposal
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LmbProposal:
    survival: dict = field(default_factory=dict)  # Label -> GaussianCluster
    birth: dict = field(default_factory=dict)

    @property
    def birth_labels(self) -> tuple[Label, ...]:
        return tuple(sorted(self.birth))


def build_lmb(clusters: Iterable[GaussianCluster]) -> LmbProposal:
    survival, birth = {}, {}
    for c in clusters:
        if c.label in survival or c.label in birth:
            raise ValueError(f"duplicate label {c.label}")
        (birth if c.kind == "birth" else survival)[c.label] = c
    return LmbProposal(dict(sorted(survival.items())), dict(sorted(birth.items())))


def lmb_sample(prop: LmbProposal, X_prev: LabeledSet, rng: np.random.Generator) -> LabeledSet:
    out = []
    for lab in X_prev.labels:
        c = prop.survival.get(lab)
        if c is not None and rng.random() <= c.mass:
            out.append(LabeledState(c.density.sample(rng), lab))
    for lab, c in prop.birth.items():
        if rng.random() <= c.mass:
            out.append(LabeledState(c.density.sample(rng), lab))
    return LabeledSet(out)


def lmb_log_q(prop: LmbProposal, X_new: LabeledSet, X_prev: LabeledSet) -> float:
    out = 0.0
    for e in X_new:
        if e.label not in X_prev and e.label not in prop.birth:
            return NEG_INF
    for lab in X_prev.labels:
        c = prop.survival.get(lab)
        if lab in X_new:
            if c is None:
                return NEG_INF
            out += _log(c.mass) + c.density.logpdf(X_new[lab].x)
        elif c is not None:
            out += _log1m(c.mass)
    for lab, c in prop.birth.items():
        if lab in X_new:
            out += _log(c.mass) + c.density.logpdf(X_new[lab].x)
        else:
            out += _log1m(c.mass)
    return float(out)


def _cluster_arrays(clusters: Sequence[GaussianCluster], dim: int):
    if not clusters:
        return np.zeros(0), np.zeros((0, dim)), np.zeros((0, dim, dim))
    mass = np.array([c.mass for c in clusters])
    mean = np.stack([c.mean for c in clusters])
    chol = np.stack([c.density.chol for c in clusters])
    return mass, mean, chol


def _gauss_logpdf_rows(clusters: Sequence[GaussianCluster], which: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.empty(which.shape[0])
    for j in np.unique(which):
        sel = which == j
        out[sel] = clusters[j].density.logpdf(x[sel])
    return out


def lmb_sample_batch(prop: LmbProposal, prev: ParticleArray, rng: np.random.Generator) -> ParticleArray:
    """Draw one proposed set per particle of ``prev`` (the i-th conditioned on the i-th)."""
    n, d = prev.n_particles, prev.dim
    universe = tuple(sorted(set(prev.labels) | set(prop.birth)))
    clusters = [prop.survival.get(lab) or prop.birth.get(lab) for lab in universe]
    is_birth = np.array([lab in prop.birth for lab in universe], bool)
    base = prev.reindex(universe).exists | is_birth[None, :]
    mass = np.array([c.mass if c is not None else 0.0 for c in clusters])
    u = rng.random((n, len(universe)))
    eps = rng.standard_normal((n, len(universe), d))
    exists = base & (u <= mass[None, :])
    states = np.zeros((n, len(universe), d))
    for j, c in enumerate(clusters):
        if c is not None and exists[:, j].any():
            states[exists[:, j], j] = c.density.transform(eps[exists[:, j], j])
    return ParticleArray(universe, exists, states)


def lmb_log_q_batch(prop: LmbProposal, new: ParticleArray, prev: ParticleArray) -> np.ndarray:
    """log q(new[i] | prev[i]) for every particle index i."""
    universe = tuple(sorted(set(prev.labels) | set(new.labels) | set(prop.birth)))
    P = prev.reindex(universe)
    Nw = new.reindex(universe)
    n = P.n_particles
    out = np.zeros(n)
    bad = np.zeros(n, bool)
    for j, lab in enumerate(universe):
        c = prop.birth.get(lab)
        eligible = np.ones(n, bool) if c is not None else P.exists[:, j]
        if c is None:
            c = prop.survival.get(lab)
        ne = Nw.exists[:, j]
        bad |= ne & ~eligible
        if c is None:
            bad |= ne
            continue
        inc = eligible & ne
        exc = eligible & ~ne
        out[exc] += _log1m(c.mass)
        if inc.any():
            out[inc] += _log(c.mass) + c.density.logpdf(Nw.states[inc, j])
    out[bad] = NEG_INF
    return out


# ---------------------------------------------------------------------------
# Single-component Vo-Vo proposal
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VovoProposal:
    card: CardinalityDistribution
    labels: tuple[Label, ...]
    existence: np.ndarray  # r+ per label, sums to 1
    clusters: dict  # Label -> GaussianCluster
    esf_table: np.ndarray  # e_0..e_|L| of existence

    @property
    def log_esf(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.esf_table)

    def log_label_weight(self, labels: Iterable[Label]) -> float:
        """log omega(L) = log rho(|L|) + sum log r+ - log e_|L|."""
        L = list(labels)
        pos = {lab: j for j, lab in enumerate(self.labels)}
        if any(lab not in pos for lab in L) or len(set(L)) != len(L):
            return NEG_INF
        n = len(L)
        if n >= self.card.probs.size or self.card.probs[n] == 0 or self.esf_table[n] == 0:
            return NEG_INF
        return float(np.log(self.card.probs[n]) + sum(np.log(self.existence[pos[lab]]) for lab in L) - np.log(self.esf_table[n]))


def build_vovo(card: CardinalityDistribution, clusters: Iterable[GaussianCluster], label_universe: Iterable[Label]) -> VovoProposal:
    """Vo-Vo proposal over ``label_universe`` (labels of the resampled particles
    plus the current birth labels) matching the CPHD cardinality."""
    by_label = {c.label: c for c in clusters}
    labels = tuple(sorted(lab for lab in set(label_universe) if lab in by_label))
    masses = np.array([by_label[lab].mass for lab in labels], dtype=float)
    n_lab = len(labels)
    probs = np.array(card.probs[: n_lab + 1], dtype=float)
    if probs.sum() <= 0:
        raise ValueError("cardinality has no mass on attainable set sizes")
    probs = probs / probs.sum()
    if n_lab == 0 or masses.sum() <= 0:
        if probs[0] < 1.0:
            raise ValueError("all cluster masses are zero but the cardinality is not concentrated on 0")
        return VovoProposal(CardinalityDistribution(probs[:1]), labels, np.zeros(n_lab), {}, np.ones(1))
    r = masses / masses.sum()
    esf = elementary_symmetric(r, n_lab)
    probs = np.where(esf > 0, probs, 0.0)
    card_t = CardinalityDistribution.normalized(probs)
    return VovoProposal(card_t, labels, r, {lab: by_label[lab] for lab in labels}, esf)


def _suffix_esf(r: np.ndarray, n_max: int) -> np.ndarray:
    """E[j, t] = e_t(r[j:]) for j = 0..L, t = 0..n_max."""
    L = r.size
    E = np.zeros((L + 1, n_max + 1))
    E[L, 0] = 1.0
    for j in range(L - 1, -1, -1):
        E[j] = E[j + 1]
        E[j, 1:] += r[j] * E[j + 1, :-1]
    return E


def _sample_label_masks(prop: VovoProposal, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Cardinality then label subsets proportional to the product of r+,
    by sequential inclusion with suffix elementary symmetric functions."""
    L = len(prop.labels)
    card = rng.choice(prop.card.probs.size, size=n_samples, p=prop.card.probs)
    u = rng.random((n_samples, L))
    mask = np.zeros((n_samples, L), bool)
    if L == 0:
        return mask
    E = _suffix_esf(prop.existence, prop.card.n_max)
    remaining = card.copy()
    for j in range(L):
        active = remaining > 0
        t = remaining[active]
        p_inc = prop.existence[j] * E[j + 1, t - 1] / E[j, t]
        take = u[active, j] < p_inc
        idx = np.flatnonzero(active)[take]
        mask[idx, j] = True
        remaining[idx] -= 1
    return mask


def vovo_sample_batch(prop: VovoProposal, n_samples: int, dim: int, rng: np.random.Generator) -> ParticleArray:
    mask = _sample_label_masks(prop, n_samples, rng)
    L = len(prop.labels)
    eps = rng.standard_normal((n_samples, L, dim))
    states = np.zeros((n_samples, L, dim))
    for j, lab in enumerate(prop.labels):
        sel = mask[:, j]
        if sel.any():
            states[sel, j] = prop.clusters[lab].density.transform(eps[sel, j])
    return ParticleArray(prop.labels, mask, states)


def vovo_sample(prop: VovoProposal, rng: np.random.Generator, dim: int | None = None) -> LabeledSet:
    if dim is None:
        dim = next(iter(prop.clusters.values())).mean.size if prop.clusters else 0
    return vovo_sample_batch(prop, 1, dim, rng).particle(0)


def vovo_log_q(prop: VovoProposal, X_new: LabeledSet) -> float:
    lw = prop.log_label_weight(X_new.labels)
    if lw == NEG_INF:
        return NEG_INF
    return float(lw + sum(prop.clusters[e.label].density.logpdf(e.x) for e in X_new))


def vovo_log_q_batch(prop: VovoProposal, new: ParticleArray) -> np.ndarray:
    extra = set(new.labels) - set(prop.labels)
    n = new.n_particles
    out = np.zeros(n)
    bad = np.zeros(n, bool)
    if extra:
        cols = [j for j, lab in enumerate(new.labels) if lab in extra]
        bad |= new.exists[:, cols].any(axis=1)
        keep = [lab for lab in new.labels if lab not in extra]
        new = ParticleArray(tuple(keep), new.exists[:, [j for j, lab in enumerate(new.labels) if lab not in extra]],
                            new.states[:, [j for j, lab in enumerate(new.labels) if lab not in extra]])
    A = new.reindex(prop.labels)
    card = A.cardinalities()
    with np.errstate(divide="ignore"):
        log_rho = np.log(np.concatenate([prop.card.probs, np.zeros(max(0, card.max(initial=0) + 1 - prop.card.probs.size))]))
        log_r = np.log(prop.existence)
    out += log_rho[card] - prop.log_esf[np.minimum(card, prop.esf_table.size - 1)]
    out[card >= prop.esf_table.size] = NEG_INF
    for j, lab in enumerate(prop.labels):
        sel = A.exists[:, j]
        if sel.any():
            out[sel] += log_r[j] + prop.clusters[lab].density.logpdf(A.states[sel, j])
    out[bad] = NEG_INF
    return out
