import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from suptrack.proposals import (
    build_lmb,
    build_vovo,
    lmb_log_q,
    lmb_log_q_batch,
    lmb_sample_batch,
    vovo_log_q,
    vovo_log_q_batch,
    vovo_sample,
    vovo_sample_batch,
)
from suptrack.rfs import Label, LabeledSet, ParticleArray, elementary_symmetric_bruteforce
from suptrack.sacphd import CardinalityDistribution, GaussianCluster

LABELS = [Label(1, i) for i in range(1, 7)]


def _clusters(masses, kinds=None, dim=2, rng=None):
    rng = rng or np.random.default_rng(0)
    kinds = kinds or ["survival"] * len(masses)
    return [
        GaussianCluster(lab, rng.normal(size=dim), np.eye(dim) * rng.uniform(0.5, 2), float(m), kind)
        for lab, m, kind in zip(LABELS, masses, kinds)
    ]


def _subset_probs(prop):
    """Exact label-subset probabilities rho(n) prod r / e_n by enumeration."""
    r = dict(zip(prop.labels, prop.existence))
    e = elementary_symmetric_bruteforce(prop.existence, len(prop.labels))
    out = {}
    for n in range(len(prop.labels) + 1):
        for L in itertools.combinations(prop.labels, n):
            p = prop.card.probs[n] * np.prod([r[lab] for lab in L]) / e[n] if n < prop.card.probs.size else 0.0
            out[frozenset(L)] = p
    return out


def _tv(p, q):
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def test_vovo_cardinality_and_subsets_match_exact(rng):
    masses = [0.9, 0.7, 0.3, 0.05, 0.5, 0.2]
    card = CardinalityDistribution.normalized([0.05, 0.15, 0.3, 0.3, 0.15, 0.05, 0, 0])
    prop = build_vovo(card, _clusters(masses), LABELS)
    n = 100_000
    pa = vovo_sample_batch(prop, n, 2, rng)
    counts = np.bincount(pa.cardinalities(), minlength=card.probs.size) / n
    assert 0.5 * np.abs(counts - card.probs[: counts.size]).sum() <= 0.02
    freq = {}
    for row in pa.exists:
        key = frozenset(lab for lab, on in zip(pa.labels, row) if on)
        freq[key] = freq.get(key, 0) + 1.0 / n
    assert _tv(freq, _subset_probs(prop)) <= 0.01


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6),
    st.lists(st.floats(0.0, 1.0), min_size=7, max_size=7),
)
def test_vovo_label_weights_sum_to_one(masses, card_w):
    card_w = np.array(card_w) + 1e-3
    prop = build_vovo(CardinalityDistribution.normalized(card_w), _clusters(masses), LABELS)
    total = 0.0
    for n in range(len(prop.labels) + 1):
        for L in itertools.combinations(prop.labels, n):
            total += np.exp(prop.log_label_weight(L))
    assert total == pytest.approx(1.0, abs=1e-9)


def test_vovo_truncates_unattainable_cardinalities():
    card = CardinalityDistribution.normalized([0.1, 0.2, 0.3, 0.4])
    prop = build_vovo(card, _clusters([0.5, 0.5]), LABELS)
    np.testing.assert_allclose(prop.card.probs, np.array([0.1, 0.2, 0.3]) / 0.6)


def test_vovo_batch_matches_scalar(rng):
    prop = build_vovo(CardinalityDistribution.normalized([0.2, 0.3, 0.3, 0.2]), _clusters([0.8, 0.4, 0.6]), LABELS)
    sets = [vovo_sample(prop, rng) for _ in range(40)]
    pa = ParticleArray.from_sets(sets, 2, labels=prop.labels)
    batch = vovo_log_q_batch(prop, pa)
    np.testing.assert_allclose(batch, [vovo_log_q(prop, X) for X in sets], rtol=1e-12)
    assert np.all(np.isfinite(batch))
    # a label outside the proposal universe has zero density
    alien = LabeledSet([(np.zeros(2), Label(9, 9))])
    assert vovo_log_q(prop, alien) == -np.inf
    assert vovo_log_q_batch(prop, ParticleArray.from_sets([alien], 2))[0] == -np.inf


def test_lmb_subsets_are_independent_bernoulli(rng):
    clusters = _clusters([0.9, 0.3, 0.6, 0.2], kinds=["survival", "survival", "birth", "birth"])
    prop = build_lmb(clusters)
    prev_set = LabeledSet([(np.zeros(2), LABELS[0]), (np.zeros(2), LABELS[1])])
    n = 100_000
    prev = ParticleArray.from_sets([prev_set] * n, 2)
    new = lmb_sample_batch(prop, prev, rng)
    r = {c.label: c.mass for c in clusters}
    freq = {}
    for row in new.exists:
        key = frozenset(lab for lab, on in zip(new.labels, row) if on)
        freq[key] = freq.get(key, 0) + 1.0 / n
    exact = {}
    for bits in itertools.product([0, 1], repeat=4):
        p = np.prod([r[lab] if b else 1 - r[lab] for lab, b in zip(LABELS[:4], bits)])
        exact[frozenset(lab for lab, b in zip(LABELS[:4], bits) if b)] = p
    assert _tv(freq, exact) <= 0.01


def test_lmb_batch_matches_scalar(rng):
    clusters = _clusters([0.9, 0.3, 0.05], kinds=["survival", "survival", "birth"])
    prop = build_lmb(clusters)
    prevs = [LabeledSet([(np.zeros(2), LABELS[0])]), LabeledSet([(np.zeros(2), LABELS[0]), (np.ones(2), LABELS[1])]), LabeledSet()]
    prev = ParticleArray.from_sets([prevs[i % 3] for i in range(30)], 2, labels=LABELS[:2])
    new = lmb_sample_batch(prop, prev, rng)
    batch = lmb_log_q_batch(prop, new, prev)
    scalar = [lmb_log_q(prop, new.particle(i), prev.particle(i)) for i in range(30)]
    np.testing.assert_allclose(batch, scalar, rtol=1e-12)
    assert np.all(np.isfinite(batch))
    # a surviving label absent from the previous set is impossible
    assert lmb_log_q(prop, LabeledSet([(np.zeros(2), LABELS[1])]), LabeledSet()) == -np.inf


def test_build_lmb_rejects_duplicate_labels():
    c = _clusters([0.5])
    with pytest.raises(ValueError):
        build_lmb(c + c)
