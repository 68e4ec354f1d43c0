import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from suptrack.gaussian import Gaussian
from suptrack.motion import LinearGaussianModel, build_ncv
from suptrack.radar import RadarSensor, SensorGrid, amplitude_from_snr
from suptrack.rfs import Label, LabeledSet, ParticleArray
from suptrack.sensors import LinearGaussianSensor
from suptrack.tracker import (
    MultiTargetParticleFilter,
    ParticleCollapse,
    TrackerConfig,
    TrackerState,
    birth_model,
    effective_sample_size,
    estimate,
    step_bootstrap,
    systematic_resample,
)

L0 = Label(0, 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30), st.integers(0, 2**32 - 1))
def test_systematic_resample_counts(w, seed):
    w = np.array(w) + 1e-6
    w /= w.sum()
    idx = systematic_resample(w, np.random.default_rng(seed))
    counts = np.bincount(idx, minlength=w.size)
    n = w.size
    assert counts.sum() == n
    assert np.all(counts >= np.floor(n * w) - 1e-9)
    assert np.all(counts <= np.ceil(n * w) + 1e-9)


def test_effective_sample_size():
    assert effective_sample_size(np.full(10, 0.1)) == pytest.approx(10)
    assert effective_sample_size([1.0, 0.0]) == pytest.approx(1)


def test_estimate_map_cardinality_and_tracks():
    a, b = Label(1, 0), Label(2, 0)
    sets = [
        LabeledSet([(np.array([0.0, 0, 0, 0]), a), (np.array([5.0, 0, 5, 0]), b)]),
        LabeledSet([(np.array([2.0, 0, 0, 0]), a)]),
        LabeledSet([(np.array([1.0, 0, 0, 0]), a)]),
    ]
    pa = ParticleArray.from_sets(sets, 4)
    est = estimate(TrackerState(pa, np.array([0.2, 0.4, 0.4])))
    assert est.n_hat == 1
    np.testing.assert_allclose(est.cardinality, [0, 0.8, 0.2])
    (t,) = est.tracks
    assert t.label == a and t.existence == pytest.approx(1.0)
    np.testing.assert_allclose(t.mean, [1.2, 0, 0, 0])
    assert t.cov[0, 0] == pytest.approx(0.2 * 1.44 + 0.4 * 0.64 + 0.4 * 0.04)
    np.testing.assert_allclose(est.positions(), [[1.2, 0.0]])


# ---------------------------------------------------------------------------
# reference bootstrap filter: per particle, dict-of-labels, same draw order
# ---------------------------------------------------------------------------


def _mv(A, x):
    return np.einsum("j,ij->i", x, A)


class ReferenceBootstrap:
    def __init__(self, motion, sensor, p_survive, p_birth, birth_density, n):
        self.F, self.C = motion.F, motion.chol
        self.H, self.sigma = sensor.H, sensor.sigma
        self.ps, self.pb = p_survive, p_birth
        # model parameters only: mean and covariance factor of the birth density
        self.bmean, self.bchol = birth_density.mean, birth_density.chol
        self.n = n

    def step(self, labels, sets, weights, z, k, rng):
        n, d = self.n, self.F.shape[0]
        u = rng.random((n, len(labels)))
        eps = rng.standard_normal((n, len(labels), d))
        ub = rng.random((n, 1))
        epsb = rng.standard_normal((n, 1, d))
        blab = Label(k, 0)
        new_labels = list(labels) + [blab]
        new_sets, logw = [], np.empty(n)
        for i in range(n):
            X = {}
            for j, lab in enumerate(labels):
                if lab in sets[i] and u[i, j] < self.ps:
                    X[lab] = _mv(self.F, sets[i][lab]) + _mv(self.C, eps[i, j])
            if ub[i, 0] < self.pb:
                X[blab] = self.bmean + _mv(self.bchol, epsb[i, 0])
            signal = np.zeros(self.H.shape[0])
            for lab in new_labels:
                signal = signal + (_mv(self.H, X[lab]) if lab in X else 0.0)
            r = z - signal
            ll = -0.5 * (r.size * (np.log(2 * np.pi) + 2 * np.log(self.sigma)) + np.sum(r * r) / self.sigma**2)
            logw[i] = np.log(weights[i]) + ll
            new_sets.append(X)
        w = np.exp(logw - special.logsumexp(logw))
        cum = np.cumsum(w)
        cum /= cum[-1]
        pos = (rng.random() + np.arange(n)) / n
        idx = np.minimum(np.searchsorted(cum, pos, side="right"), n - 1)
        sets = [new_sets[i] for i in idx]
        labels = [lab for lab in new_labels if any(lab in X for X in sets)]
        return labels, sets, np.full(n, 1.0 / n)


def test_bootstrap_matches_reference_bit_exact():
    n = 200
    motion = build_ncv(1.0, 0.5)
    sensor = LinearGaussianSensor(np.random.default_rng(3).normal(size=(6, 4)) * 0.05, sigma=1.0)
    cfg = TrackerConfig(n_particles=n, proposal="transition", p_birth=0.3, birth_mean=(0, 1, 0, 1), birth_cov_diag=(4, 1, 4, 1))
    birth_density = Gaussian(cfg.birth_mean, np.diag(cfg.birth_cov_diag))
    ref = ReferenceBootstrap(motion, sensor, cfg.p_survive, cfg.p_birth, birth_density, n)
    zr = np.random.default_rng(4)
    rng_a, rng_b = np.random.default_rng(5), np.random.default_rng(5)
    f = MultiTargetParticleFilter(motion, sensor, cfg)
    state = f.initial_state()
    labels, sets, w = [], [{} for _ in range(n)], np.full(n, 1.0 / n)
    for k in range(1, 9):
        z = zr.normal(size=6)
        state = step_bootstrap(state, z, motion, sensor, cfg, rng_a)
        labels, sets, w = ref.step(labels, sets, w, z, k, rng_b)
        pa = state.particles
        assert list(pa.labels) == labels
        for i in range(n):
            assert set(pa.particle(i).labels) == set(sets[i])
            for j, lab in enumerate(pa.labels):
                if pa.exists[i, j]:
                    assert np.array_equal(pa.states[i, j], sets[i][lab])
        assert np.array_equal(state.weights, w)


# ---------------------------------------------------------------------------
# one target on a scalar random walk against a grid filter
# ---------------------------------------------------------------------------


def _grid_posterior_means(prior_mean, prior_var, q, sigma, zs):
    x = np.linspace(prior_mean - 20, prior_mean + 20, 4001)
    dx = x[1] - x[0]
    p = stats.norm.pdf(x, prior_mean, np.sqrt(prior_var))
    kern = stats.norm.pdf(x[:, None] - x[None, :], 0, np.sqrt(q))
    out = []
    for z in zs:
        p = kern @ p * dx
        p = p * stats.norm.pdf(z, x, sigma)
        p /= p.sum() * dx
        out.append(float(np.sum(x * p) * dx))
    return np.array(out)


def _single_target_run(proposal, mode, n, seed, zs, q=0.5, sigma=1.0):
    motion = LinearGaussianModel([[1.0]], [[q]])
    sensor = LinearGaussianSensor([[1.0]], sigma)
    cfg = TrackerConfig(
        n_particles=n, proposal=proposal, vovo_weight_mode=mode, p_survive=1.0, p_birth=0.0,
        birth_mean=(0.0,), birth_cov_diag=(1.0,), n_birth_particles=10, sigma_n=sigma, n_max=3, cov_floor=(1e-6,),
    )
    rng = np.random.default_rng(seed)
    f = MultiTargetParticleFilter(motion, sensor, cfg)
    prior = ParticleArray((L0,), np.ones((n, 1), bool), rng.normal(10.0, 1.0, (n, 1, 1)))
    state = TrackerState(prior, np.full(n, 1.0 / n), 0)
    means = []
    for z in zs:
        state = f.step(state, np.array([z]), rng)
        pa = state.particles
        j = pa.labels.index(L0)
        w = state.weights / state.weights.sum()
        assert np.all(pa.exists[:, j])
        means.append(float(w @ pa.states[:, j, 0]))
    return np.array(means)


ZS = np.array([10.8, 11.1, 12.4, 12.0, 13.1, 13.9])


@pytest.mark.parametrize("proposal", ["transition", "vovo", "lmb"])
def test_single_target_matches_grid_filter(proposal):
    ref = _grid_posterior_means(10.0, 1.0, 0.5, 1.0, ZS)
    got = _single_target_run(proposal, "single", 4000, 11, ZS)
    np.testing.assert_allclose(got, ref, rtol=0.02)


def test_vovo_weight_modes_agree():
    single = _single_target_run("vovo", "single", 600, 1, ZS[:4])
    full = _single_target_run("vovo", "full", 600, 1, ZS[:4])
    ref = _grid_posterior_means(10.0, 1.0, 0.5, 1.0, ZS[:4])
    np.testing.assert_allclose(single, ref, rtol=0.02)
    np.testing.assert_allclose(full, ref, rtol=0.02)
    np.testing.assert_allclose(single, full, rtol=0.02)


def test_lmb_weights_finite_on_radar():
    grid = SensorGrid.regular(range_limits=(1150, 1350), azimuth_limits_deg=(40, 50))
    sensor = RadarSensor(grid, amplitude_from_snr(10.0))
    motion = build_ncv(1.0, 20.0)
    cfg = TrackerConfig(n_particles=500, proposal="lmb", n_birth_particles=1000, sigma_n=8.0, cov_floor=(1, 0.25, 1, 0.25))
    f = MultiTargetParticleFilter(motion, sensor, cfg)
    rng = np.random.default_rng(0)
    truth = np.array([1250.0, -10.0, 1250.0, -10.0])
    state = f.initial_state()
    for k in range(1, 7):
        X = LabeledSet([(truth, Label(1, 1))])
        state = f.step(state, sensor.simulate(X, rng, k), rng)
        truth = motion.F @ truth
        assert state.violations == 0
        assert np.all(np.isfinite(state.weights))


class _NullSensor:
    def log_likelihood_batch(self, z, particles):
        return np.full(particles.n_particles, -np.inf)


def test_collapse_raises_with_diagnostics():
    cfg = TrackerConfig(n_particles=10, proposal="transition")
    motion = build_ncv(1.0, 1.0)
    f = MultiTargetParticleFilter(motion, _NullSensor(), cfg)
    with pytest.raises(ParticleCollapse) as exc:
        f.step(f.initial_state(), None, np.random.default_rng(0))
    assert exc.value.diagnostics["k"] == 1


def test_config_validation():
    with pytest.raises(ValueError):
        TrackerConfig(proposal="nope")
    with pytest.raises(ValueError):
        TrackerConfig(vovo_weight_mode="both")
    with pytest.raises(ValueError):
        TrackerConfig(birth_mean=(0.0,))


def test_birth_model_labels():
    birth = birth_model(4, TrackerConfig(n_birth_labels=2))
    assert birth.labels == (Label(4, 0), Label(4, 1))
