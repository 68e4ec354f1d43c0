"""OSPA distance and Monte Carlo aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class OspaParams:
    cutoff: float = 100.0
    order: float = 1.0

    def __post_init__(self):
        if not self.cutoff > 0:
            raise ValueError("OSPA cutoff must be positive")
        if not self.order >= 1:
            raise ValueError("OSPA order must be >= 1")


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return np.zeros((0, X.shape[-1] if X.ndim == 2 else 2))
    return X.reshape(-1, X.shape[-1]) if X.ndim > 1 else X.reshape(-1, 1)


def cutoff_cost(X, Y, params: OspaParams) -> np.ndarray:
    X, Y = _as_points(X), _as_points(Y)
    D = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2)
    return np.minimum(D, params.cutoff) ** params.order


def ospa(X, Y, params: OspaParams = OspaParams()) -> float:
    """OSPA distance between two point sets (rows are points)."""
    X, Y = _as_points(X), _as_points(Y)
    m, n = len(X), len(Y)
    if m == 0 and n == 0:
        return 0.0
    if m > n:
        X, Y, m, n = Y, X, n, m
    c, p = params.cutoff, params.order
    if m == 0:
        return float(c)
    C = cutoff_cost(X, Y, params)
    rows, cols = linear_sum_assignment(C)
    total = C[rows, cols].sum() + c**p * (n - m)
    return float((total / n) ** (1.0 / p))


@dataclass
class Aggregate:
    mean_n_hat: np.ndarray
    std_n_hat: np.ndarray
    mean_ospa: np.ndarray
    std_ospa: np.ndarray

    @property
    def K(self) -> int:
        return self.mean_n_hat.size


def aggregate(runs) -> Aggregate:
    """Per-step mean and std across runs; ``runs[r][k] = (n_hat, ospa)``.

    The std is the sample standard deviation (ddof=1), 0 for a single run.
    """
    lengths = {len(r) for r in runs}
    if len(runs) == 0:
        raise ValueError("no runs to aggregate")
    if len(lengths) != 1:
        raise ValueError("ragged input: runs have different lengths")
    arr = np.asarray(runs, dtype=float)  # (R, K, 2)
    ddof = 1 if arr.shape[0] > 1 else 0
    return Aggregate(
        arr[:, :, 0].mean(axis=0),
        arr[:, :, 0].std(axis=0, ddof=ddof),
        arr[:, :, 1].mean(axis=0),
        arr[:, :, 1].std(axis=0, ddof=ddof),
    )
