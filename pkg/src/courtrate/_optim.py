"""Small numerical helpers shared by the maximum-likelihood fits."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ConvergenceError(RuntimeError):
    """Optimizer stopped before meeting its tolerances; ``best`` holds the best point found."""

    def __init__(self, message: str, best=None, loglik: float = float("nan")):
        super().__init__(message)
        self.best = best
        self.loglik = loglik


def initial_simplex(x0: Sequence[float], step=0.2) -> np.ndarray:
    """Nelder-Mead start with a fixed step per coordinate.

    scipy's default scales each step by the coordinate itself, which collapses
    the simplex when a log-scale parameter starts at zero.
    """
    x0 = np.asarray(x0, dtype=float)
    return np.vstack([x0, x0 + np.diag(np.broadcast_to(np.asarray(step, dtype=float), x0.shape))])


def numerical_hessian(f: Callable[[np.ndarray], float], x: Sequence[float], steps: Sequence[float]) -> np.ndarray:
    """Central-difference Hessian of a scalar function."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(steps, dtype=float)
    k = len(x)
    f0 = f(x)
    H = np.empty((k, k))
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return H


def covariance_from_hessian(H: np.ndarray) -> np.ndarray:
    """Inverse observed information; NaN where the Hessian is not positive definite."""
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return np.full_like(H, np.nan)
    return np.linalg.inv(H)
