"""Labels, labeled sets and labeled multi-target densities.

Everything density-valued is returned in the log domain; ``-inf`` encodes an
impossible configuration rather than an exception.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

NEG_INF = float("-inf")


def _log(v: float) -> float:
    return math.log(v) if v > 0.0 else NEG_INF


@dataclass(frozen=True, order=True)
class Label:
    """Track label ``(birth_time, birth_index)``; ordered lexicographically."""

    birth_time: int
    birth_index: int

    def __post_init__(self):
        if self.birth_time < 0 or self.birth_index < 0:
            raise ValueError("label fields must be nonnegative")

    def __str__(self) -> str:
        return f"{self.birth_time}.{self.birth_index}"

    @classmethod
    def parse(cls, text: str) -> "Label":
        k, i = text.split(".")
        return cls(int(k), int(i))


@dataclass(frozen=True, eq=False)
class LabeledState:
    x: np.ndarray
    label: Label

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        x.flags.writeable = False
        object.__setattr__(self, "x", x)

    def __eq__(self, other):
        if not isinstance(other, LabeledState):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.x, other.x)

    def __hash__(self):
        return hash((self.label, self.x.tobytes()))


def distinct_label_indicator(elements: Iterable) -> int:
    """1 if the labels of ``elements`` are pairwise distinct, else 0.

    Elements may be :class:`LabeledState` objects or ``(x, label)`` pairs.
    """
    labels = [e.label if isinstance(e, LabeledState) else e[1] for e in elements]
    return int(len(labels) == len(set(labels)))


class LabeledSet:
    """Finite set of labeled states with distinct labels, kept sorted by label."""

    __slots__ = ("_elements", "_index")

    def __init__(self, elements: Iterable = ()):
        items = [e if isinstance(e, LabeledState) else LabeledState(e[0], e[1]) for e in elements]
        if not distinct_label_indicator(items):
            raise ValueError("labeled set requires distinct labels")
        items.sort(key=lambda e: e.label)
        self._elements: tuple[LabeledState, ...] = tuple(items)
        self._index = {e.label: e for e in self._elements}

    @classmethod
    def from_arrays(cls, labels: Sequence[Label], states) -> "LabeledSet":
        states = np.asarray(states, dtype=float)
        return cls(LabeledState(states[i], lab) for i, lab in enumerate(labels))

    def __len__(self) -> int:
        return len(self._elements)

    def __iter__(self) -> Iterator[LabeledState]:
        return iter(self._elements)

    def __contains__(self, label: Label) -> bool:
        return label in self._index

    def __getitem__(self, label: Label) -> LabeledState:
        return self._index[label]

    def __eq__(self, other):
        if not isinstance(other, LabeledSet):
            return NotImplemented
        return self._elements == other._elements

    def __hash__(self):
        return hash(self._elements)

    def __repr__(self) -> str:
        inner = ", ".join(f"{e.label}:{np.round(e.x, 3).tolist()}" for e in self._elements)
        return f"LabeledSet({{{inner}}})"

    @property
    def labels(self) -> tuple[Label, ...]:
        return tuple(e.label for e in self._elements)

    def label_set(self) -> frozenset:
        return frozenset(self._index)

    def states(self, dim: int | None = None) -> np.ndarray:
        if not self._elements:
            return np.zeros((0, dim or 0))
        return np.stack([e.x for e in self._elements])

    def restrict(self, labels: Iterable[Label]) -> "LabeledSet":
        """Elements whose label is in ``labels`` (set intersection by label)."""
        keep = set(labels)
        return LabeledSet(e for e in self._elements if e.label in keep)

    def without(self, labels: Iterable[Label]) -> "LabeledSet":
        drop = set(labels)
        return LabeledSet(e for e in self._elements if e.label not in drop)

    def union(self, other: "LabeledSet") -> "LabeledSet":
        return LabeledSet(self._elements + other._elements)


def multi_object_exponential(h: Callable[[LabeledState], float], X: Iterable[LabeledState]) -> float:
    """Product of ``h`` over the elements of ``X``; 1 on the empty set."""
    out = 1.0
    for x in X:
        out *= h(x)
    return out


def elementary_symmetric(values: Sequence[float], up_to: int) -> np.ndarray:
    """Elementary symmetric functions e_0..e_n of ``values``.

    Uses the one-pass-per-value recurrence e_j <- e_j + v e_{j-1}.
    """
    vals = np.asarray(values, dtype=float).ravel()
    if up_to < 0:
        raise ValueError("order must be nonnegative")
    if up_to > vals.size:
        raise ValueError("order exceeds set size")
    e = np.zeros(up_to + 1)
    e[0] = 1.0
    for v in vals:
        e[1:] = e[1:] + v * e[:-1]
    return e


def elementary_symmetric_bruteforce(values: Sequence[float], up_to: int) -> np.ndarray:
    """Exhaustive subset enumeration; reference implementation for small inputs."""
    vals = list(map(float, values))
    if up_to > len(vals):
        raise ValueError("order exceeds set size")
    return np.array([sum(math.prod(c) for c in combinations(vals, j)) for j in range(up_to + 1)])


@dataclass(frozen=True)
class LmbParams:
    """Labeled multi-Bernoulli parameters ``{label: (r, density)}``.

    ``density`` is any object exposing ``logpdf(x)``.
    """

    components: Mapping[Label, tuple[float, object]] = field(default_factory=dict)

    def __post_init__(self):
        comps = dict(sorted(self.components.items()))
        for lab, (r, _) in comps.items():
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"existence probability of {lab} outside [0, 1]")
        object.__setattr__(self, "components", comps)

    @property
    def labels(self) -> tuple[Label, ...]:
        return tuple(self.components)

    def log_weight(self, labels: Iterable[Label]) -> float:
        """log omega(L)."""
        L = set(labels)
        if not L <= set(self.components):
            return NEG_INF
        out = 0.0
        for lab, (r, _) in self.components.items():
            out += _log(r) if lab in L else _log(1.0 - r)
        return out


def lmb_log_density(params: LmbParams, X: LabeledSet) -> float:
    lw = params.log_weight(X.labels)
    if lw == NEG_INF:
        return NEG_INF
    for e in X:
        lw += params.components[e.label][1].logpdf(e.x)
    return float(lw)


@dataclass(frozen=True)
class VovoSingleTerm:
    """Single-component Vo-Vo (GLMB) density: label weight times a
    multi-object exponential of per-label densities."""

    log_weight_fn: Callable[[frozenset], float]
    densities: Mapping[Label, object]

    def log_density(self, X: LabeledSet) -> float:
        if any(lab not in self.densities for lab in X.labels):
            return NEG_INF
        lw = self.log_weight_fn(X.label_set())
        if lw == NEG_INF:
            return NEG_INF
        return float(lw + sum(self.densities[e.label].logpdf(e.x) for e in X))


def labeled_transition_log_density(
    X_prev: LabeledSet,
    X_next: LabeledSet,
    survive_prob: Callable[[np.ndarray, Label], float],
    log_kin_transition: Callable[[np.ndarray, np.ndarray, Label], float],
    birth: LmbParams,
) -> float:
    """log f(X_next | X_prev) for the labeled survival-plus-LMB-birth model."""
    birth_labels = set(birth.labels)
    survivors, born = [], []
    for e in X_next:
        if e.label in X_prev:
            survivors.append(e)
        elif e.label in birth_labels:
            born.append(e)
        else:
            return NEG_INF
    out = 0.0
    for e in X_prev:
        ps = survive_prob(e.x, e.label)
        if e.label in X_next:
            out += _log(ps) + log_kin_transition(X_next[e.label].x, e.x, e.label)
        else:
            out += _log(1.0 - ps)
        if out == NEG_INF:
            return NEG_INF
    return float(out + lmb_log_density(birth, LabeledSet(born)))


# ---------------------------------------------------------------------------
# Array form used by the particle filter: N particles over a shared label
# universe, with an existence mask and a padded state tensor.
# ---------------------------------------------------------------------------


@dataclass
class ParticleArray:
    labels: tuple[Label, ...]
    exists: np.ndarray  # (N, L) bool
    states: np.ndarray  # (N, L, d); zero where not exists

    def __post_init__(self):
        self.labels = tuple(self.labels)
        if list(self.labels) != sorted(set(self.labels)):
            raise ValueError("label universe must be sorted and unique")
        self.exists = np.asarray(self.exists, dtype=bool)
        self.states = np.asarray(self.states, dtype=float)
        n, L = self.exists.shape
        if self.states.shape[:2] != (n, L):
            raise ValueError("states and exists shapes disagree")

    @property
    def n_particles(self) -> int:
        return self.exists.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    @classmethod
    def empty(cls, n: int, dim: int) -> "ParticleArray":
        return cls((), np.zeros((n, 0), bool), np.zeros((n, 0, dim)))

    @classmethod
    def from_sets(cls, sets: Sequence[LabeledSet], dim: int, labels: Iterable[Label] | None = None) -> "ParticleArray":
        universe = sorted(set(labels) if labels is not None else {lab for s in sets for lab in s.labels})
        pos = {lab: j for j, lab in enumerate(universe)}
        exists = np.zeros((len(sets), len(universe)), bool)
        states = np.zeros((len(sets), len(universe), dim))
        for i, s in enumerate(sets):
            for e in s:
                j = pos[e.label]
                exists[i, j] = True
                states[i, j] = e.x
        return cls(tuple(universe), exists, states)

    def particle(self, i: int) -> LabeledSet:
        idx = np.flatnonzero(self.exists[i])
        return LabeledSet(LabeledState(self.states[i, j], self.labels[j]) for j in idx)

    def to_sets(self) -> list[LabeledSet]:
        return [self.particle(i) for i in range(self.n_particles)]

    def cardinalities(self) -> np.ndarray:
        return self.exists.sum(axis=1)

    def take(self, idx) -> "ParticleArray":
        idx = np.asarray(idx)
        return ParticleArray(self.labels, self.exists[idx], self.states[idx])

    def reindex(self, labels: Iterable[Label]) -> "ParticleArray":
        """Express on a new label universe; labels missing from it must not exist."""
        universe = tuple(sorted(set(labels)))
        pos = {lab: j for j, lab in enumerate(universe)}
        n = self.n_particles
        exists = np.zeros((n, len(universe)), bool)
        states = np.zeros((n, len(universe), self.dim))
        for j, lab in enumerate(self.labels):
            if lab in pos:
                exists[:, pos[lab]] = self.exists[:, j]
                states[:, pos[lab]] = self.states[:, j]
            elif self.exists[:, j].any():
                raise ValueError(f"label {lab} exists but is missing from the new universe")
        return ParticleArray(universe, exists, states)

    def pruned(self) -> "ParticleArray":
        """Drop labels that no particle carries."""
        keep = self.exists.any(axis=0)
        return ParticleArray(
            tuple(lab for lab, k in zip(self.labels, keep) if k), self.exists[:, keep], self.states[:, keep]
        )


def pairwise_transition_log_density(
    prev: ParticleArray,
    nxt: ParticleArray,
    prev_idx: np.ndarray,
    next_idx: np.ndarray,
    p_survive: float,
    log_kin_transition: Callable[[np.ndarray, np.ndarray], np.ndarray],
    birth: LmbParams,
) -> np.ndarray:
    """Vectorised log f(nxt[next_idx[k]] | prev[prev_idx[k]]) for each pair k.

    ``log_kin_transition(x_next, x_prev)`` takes (M, d) arrays; the survival
    probability is a scalar constant.
    """
    prev_idx = np.asarray(prev_idx)
    next_idx = np.asarray(next_idx)
    universe = sorted(set(prev.labels) | set(nxt.labels) | set(birth.labels))
    P = prev.reindex(universe)
    Nx = nxt.reindex(universe)
    is_birth = np.array([lab in birth.components for lab in universe], bool)
    pe = P.exists[prev_idx]
    ne = Nx.exists[next_idx]
    out = np.zeros(prev_idx.shape[0])

    with np.errstate(divide="ignore"):
        log_ps, log_qs = np.log(p_survive), np.log1p(-p_survive)
    surv = pe & ne & ~is_birth
    dead = pe & ~ne
    bad = (~pe & ne & ~is_birth) | (pe & is_birth)
    out += np.where(dead, log_qs, 0.0).sum(axis=1)
    if surv.any():
        rows, cols = np.nonzero(surv)
        lk = log_kin_transition(Nx.states[next_idx[rows], cols], P.states[prev_idx[rows], cols])
        out += np.bincount(rows, weights=log_ps + lk, minlength=out.shape[0])
    for j in np.flatnonzero(is_birth):
        r, dens = birth.components[universe[j]]
        born = ne[:, j]
        with np.errstate(divide="ignore"):
            contrib = np.full(out.shape[0], np.log1p(-r) if r < 1 else NEG_INF)
            if born.any():
                contrib[born] = np.log(r) + dens.logpdf(Nx.states[next_idx[born], j])
        out += contrib
    out[bad.any(axis=1)] = NEG_INF
    return out
