"""Single-target linear-Gaussian dynamics (NCV plus optional amplitude walk)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .gaussian import LOG_2PI

Q_REGULARIZATION = 1e-12


@dataclass(frozen=True, eq=False)
class LinearGaussianModel:
    """x_next = F x_prev + v, v ~ N(0, Q)."""

    F: np.ndarray
    Q: np.ndarray
    clamp_nonnegative: tuple[int, ...] = ()
    chol: np.ndarray = field(init=False, repr=False)
    log_det: float = field(init=False, repr=False)

    def __post_init__(self):
        F = np.array(self.F, dtype=float)
        Q = np.array(self.Q, dtype=float)
        d = F.shape[0]
        if F.shape != (d, d) or Q.shape != (d, d):
            raise ValueError("F and Q must be square and of equal size")
        Qr = 0.5 * (Q + Q.T) + Q_REGULARIZATION * np.eye(d)
        try:
            chol = np.linalg.cholesky(Qr)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("process noise covariance is singular after regularization") from exc
        for name, val in (("F", F), ("Q", Q), ("chol", chol)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)
        object.__setattr__(self, "log_det", 2.0 * float(np.sum(np.log(np.diag(chol)))))

    @property
    def state_dim(self) -> int:
        return self.F.shape[0]

    def _check(self, x: np.ndarray):
        if x.shape[-1] != self.state_dim:
            raise ValueError(f"state dimension {x.shape[-1]} does not match model dimension {self.state_dim}")

    def predict_mean(self, x_prev) -> np.ndarray:
        x_prev = np.asarray(x_prev, dtype=float)
        self._check(x_prev)
        return np.einsum("...j,ij->...i", x_prev, self.F)

    def sample(self, x_prev, rng: np.random.Generator) -> np.ndarray:
        """One transition draw for each state along the leading axes."""
        x_prev = np.asarray(x_prev, dtype=float)
        self._check(x_prev)
        return self.propagate(x_prev, rng.standard_normal(x_prev.shape))

    def propagate(self, x_prev: np.ndarray, eps: np.ndarray) -> np.ndarray:
        """Transition driven by given standard-normal draws ``eps``."""
        # einsum, unlike BLAS matmul, gives the same bits whatever the batch shape
        x_prev = np.asarray(x_prev, dtype=float)
        out = np.einsum("...j,ij->...i", x_prev, self.F) + np.einsum("...j,ij->...i", eps, self.chol)
        for j in self.clamp_nonnegative:
            out[..., j] = np.abs(out[..., j])
        return out

    def logpdf(self, x_next, x_prev) -> np.ndarray | float:
        x_next = np.asarray(x_next, dtype=float)
        self._check(x_next)
        diff = (x_next - self.predict_mean(x_prev)).reshape(-1, self.state_dim)
        sol = linalg.solve_triangular(self.chol, diff.T, lower=True)
        out = -0.5 * (self.state_dim * LOG_2PI + self.log_det + np.sum(sol * sol, axis=0))
        if x_next.ndim == 1 and np.ndim(x_prev) == 1:
            return float(out[0])
        return out.reshape(np.broadcast_shapes(x_next.shape, np.shape(x_prev))[:-1])


@dataclass(frozen=True, eq=False)
class NcvModel(LinearGaussianModel):
    dt: float = 1.0
    accel_noise_psd: float = 0.0
    amplitude_walk_std: float | None = None


def ncv_matrices(dt: float, accel_noise_psd: float, amplitude_walk_std: float | None = None):
    """F and Q of the discretised white-noise-acceleration model, state order
    (p_x, v_x, p_y, v_y[, amplitude])."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if accel_noise_psd < 0 or (amplitude_walk_std is not None and amplitude_walk_std < 0):
        raise ValueError("noise parameters must be nonnegative")
    Fa = np.array([[1.0, dt], [0.0, 1.0]])
    Qa = accel_noise_psd * np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])
    F = linalg.block_diag(Fa, Fa)
    Q = linalg.block_diag(Qa, Qa)
    if amplitude_walk_std is not None:
        F = linalg.block_diag(F, [[1.0]])
        Q = linalg.block_diag(Q, [[amplitude_walk_std**2]])
    return F, Q


def build_ncv(dt: float, accel_noise_psd: float, amplitude_walk_std: float | None = None) -> NcvModel:
    F, Q = ncv_matrices(dt, accel_noise_psd, amplitude_walk_std)
    clamp = (4,) if amplitude_walk_std is not None else ()
    return NcvModel(F, Q, clamp, dt=dt, accel_noise_psd=accel_noise_psd, amplitude_walk_std=amplitude_walk_std)


def sample_transition(model: LinearGaussianModel, x_prev, rng: np.random.Generator) -> np.ndarray:
    return model.sample(x_prev, rng)


def log_transition_pdf(model: LinearGaussianModel, x_next, x_prev):
    return model.logpdf(x_next, x_prev)
