"""Linear-Gaussian superpositional sensor, z = sum_x H x + n, n ~ N(0, sigma^2 I).

It has the exact additive-Gaussian form the SA-CPHD update assumes, which
makes it the surrogate used for closed-form and grid-filter checks.
"""

from __future__ import annotations

import numpy as np

from .gaussian import LOG_2PI
from .rfs import ParticleArray


class LinearGaussianSensor:
    def __init__(self, H, sigma: float):
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.sigma = float(sigma)

    @property
    def m(self) -> int:
        return self.H.shape[0]

    def default_sigma_n(self) -> float:
        return self.sigma

    def preprocess(self, z) -> np.ndarray:
        return np.asarray(getattr(z, "values", z), dtype=float)

    def gamma_sparse(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        states = np.asarray(states, dtype=float)
        vals = states @ self.H.T
        cells = np.broadcast_to(np.arange(self.m), vals.shape)
        return cells, vals

    def mean_signal(self, particles: ParticleArray) -> np.ndarray:
        contrib = np.einsum("...j,ij->...i", np.where(particles.exists[..., None], particles.states, 0.0), self.H)
        return contrib.sum(axis=1)

    def simulate(self, states, rng: np.random.Generator) -> np.ndarray:
        states = np.asarray(states, dtype=float).reshape(-1, self.H.shape[1])
        return states.sum(axis=0) @ self.H.T + self.sigma * rng.standard_normal(self.m)

    def log_likelihood_batch(self, z, particles: ParticleArray) -> np.ndarray:
        r = np.asarray(z, dtype=float) - self.mean_signal(particles)
        return -0.5 * (self.m * (LOG_2PI + 2 * np.log(self.sigma)) + np.sum(r * r, axis=1) / self.sigma**2)
