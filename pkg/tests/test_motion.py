import numpy as np
import pytest

from suptrack.motion import build_ncv, log_transition_pdf, ncv_matrices, sample_transition


def test_unit_step_noiseless():
    F, Q = ncv_matrices(1.0, 0.0)
    np.testing.assert_array_equal(F[:2, :2], [[1, 1], [0, 1]])
    np.testing.assert_array_equal(Q, np.zeros((4, 4)))
    m = build_ncv(1.0, 0.0)
    x = np.array([1250.0, -10.0, 1250.0, -10.0])
    np.testing.assert_allclose(m.sample(x, np.random.default_rng(0)), [1240.0, -10.0, 1240.0, -10.0], atol=1e-5)


def test_white_noise_acceleration_block():
    _, Q = ncv_matrices(1.0, 1.0)
    # integral of [t, 1]^T [t, 1] over one step
    np.testing.assert_allclose(Q[:2, :2], [[1 / 3, 1 / 2], [1 / 2, 1]], rtol=1e-15)
    np.testing.assert_allclose(Q[2:, 2:], Q[:2, :2])
    assert np.all(Q[:2, 2:] == 0)


def test_dt_two():
    F, _ = ncv_matrices(2.0, 0.0)
    x = np.array([0.0, 3.0, 1.0, -1.0])
    np.testing.assert_allclose(F @ x, [6.0, 3.0, -1.0, -1.0])


def test_amplitude_component():
    F, Q = ncv_matrices(1.0, 1.0, amplitude_walk_std=0.5)
    assert F.shape == (5, 5) and F[4, 4] == 1.0 and Q[4, 4] == 0.25
    m = build_ncv(1.0, 1.0, amplitude_walk_std=10.0)
    draws = m.sample(np.tile([0, 0, 0, 0, 0.1], (500, 1)), np.random.default_rng(1))
    assert np.all(draws[:, 4] >= 0)


def test_bad_dt():
    with pytest.raises(ValueError):
        ncv_matrices(0.0, 1.0)


def test_matrices_reproducible():
    a, b = ncv_matrices(0.5, 2.0), ncv_matrices(0.5, 2.0)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_logpdf_peak():
    m = build_ncv(1.0, 1.0)
    x = np.array([1.0, 2.0, 3.0, 4.0])
    want = -0.5 * np.linalg.slogdet(2 * np.pi * m.Q)[1]
    assert np.isclose(log_transition_pdf(m, m.F @ x, x), want, rtol=1e-10)


def test_empirical_covariance():
    m = build_ncv(1.0, 1.0)
    rng = np.random.default_rng(7)
    x = np.zeros((10**6, 4))
    d = m.sample(x, rng)
    C = np.cov(d.T)
    assert np.linalg.norm(C - m.Q) / np.linalg.norm(m.Q) < 0.02


def test_importance_self_test():
    """E_q[f/q] = 1 with q = f."""
    m = build_ncv(1.0, 1.0)
    rng = np.random.default_rng(3)
    x0 = np.array([0.0, 1.0, 0.0, -1.0])
    xs = sample_transition(m, np.tile(x0, (10**5, 1)), rng)
    r = np.exp(m.logpdf(xs, x0) - m.logpdf(xs, x0))
    assert abs(r.mean() - 1.0) < 3 * r.std() / np.sqrt(r.size) + 1e-12
