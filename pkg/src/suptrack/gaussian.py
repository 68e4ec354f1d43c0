"""Multivariate normal helper used as the single-target density handle."""

from __future__ import annotations

import numpy as np
from scipy import linalg

LOG_2PI = float(np.log(2.0 * np.pi))


def stable_cholesky(cov: np.ndarray, jitter: float = 1e-12, max_tries: int = 8) -> np.ndarray:
    """Lower Cholesky factor of ``cov`` with escalating diagonal jitter."""
    cov = 0.5 * (np.asarray(cov, dtype=float) + np.asarray(cov, dtype=float).T)
    eye = np.eye(cov.shape[0])
    scale = max(float(np.max(np.abs(np.diag(cov)))), 1.0)
    eps = jitter
    for _ in range(max_tries):
        try:
            return np.linalg.cholesky(cov + eps * scale * eye)
        except np.linalg.LinAlgError:
            eps *= 100.0
    raise np.linalg.LinAlgError("covariance is not positive definite after regularization")


class Gaussian:
    """N(mean, cov) with cached factorisation; log-density and sampling vectorised
    over leading axes of the argument."""

    def __init__(self, mean, cov, jitter: float = 1e-12):
        self.mean = np.asarray(mean, dtype=float).copy()
        self.cov = np.asarray(cov, dtype=float).copy()
        self.dim = self.mean.shape[0]
        if self.cov.shape != (self.dim, self.dim):
            raise ValueError("mean and cov dimensions disagree")
        self.chol = stable_cholesky(self.cov, jitter)
        self.log_det = 2.0 * float(np.sum(np.log(np.diag(self.chol))))
        self.mean.flags.writeable = False
        self.cov.flags.writeable = False

    def logpdf(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        diff = (x - self.mean).reshape(-1, self.dim)
        sol = linalg.solve_triangular(self.chol, diff.T, lower=True)
        maha = np.sum(sol * sol, axis=0)
        out = -0.5 * (self.dim * LOG_2PI + self.log_det + maha)
        if x.ndim == 1:
            return float(out[0])
        return out.reshape(x.shape[:-1])

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
        eps = rng.standard_normal(shape + (self.dim,))
        return self.transform(eps)

    def transform(self, eps: np.ndarray) -> np.ndarray:
        """Map standard-normal draws to this distribution."""
        return self.mean + np.einsum("...j,ij->...i", eps, self.chol)

    def __repr__(self) -> str:
        return f"Gaussian(mean={self.mean.tolist()}, cov_diag={np.diag(self.cov).tolist()})"
