"""Generic pieces of the method of moments: Jacobians and sandwiches."""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy import linalg

from .exceptions import EstimationError


def numerical_jacobian(fun: Callable[[np.ndarray], np.ndarray], theta: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian with step ``rel_step * (1 + |theta_k|)``."""
    theta = np.asarray(theta, dtype=float)
    f0 = np.asarray(fun(theta))
    G = np.empty((f0.size, theta.size))
    for k in range(theta.size):
        h = rel_step * (1.0 + abs(theta[k]))
        up = theta.copy()
        dn = theta.copy()
        up[k] += h
        dn[k] -= h
        G[:, k] = (np.asarray(fun(up)) - np.asarray(fun(dn))) / (2 * h)
    return G


def moment_covariance(g: np.ndarray, center: bool = True) -> np.ndarray:
    """Heteroskedasticity-robust covariance of per-unit moment contributions."""
    if center:
        g = g - g.mean(axis=0)
    S = g.T @ g / g.shape[0]
    return (S + S.T) / 2


def sandwich(G: np.ndarray, W: np.ndarray, S: np.ndarray, n: int) -> np.ndarray:
    """Asymptotic covariance ``(G'WG)^-1 G'WSWG (G'WG)^-1 / n``."""
    A = G.T @ W @ G
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e14:
        raise EstimationError(f"G'WG is singular (condition number {cond:.3g})")
    Ai = linalg.inv(A)
    B = G.T @ W @ S @ W @ G
    V = Ai @ B @ Ai / n
    return (V + V.T) / 2
