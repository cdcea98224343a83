"""Small regression helpers shared across modules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .exceptions import RankDeficiencyError


def check_full_rank(X: np.ndarray, names: Sequence[str], rtol: float = 1e-10) -> None:
    """Raise :class:`RankDeficiencyError` naming the collinear columns."""
    if X.shape[0] < X.shape[1]:
        raise RankDeficiencyError(
            f"{X.shape[0]} rows cannot identify {X.shape[1]} coefficients", list(names)
        )
    scale = np.sqrt((X**2).sum(axis=0))
    scale[scale == 0] = 1.0
    Xs = X / scale
    _, s, vt = linalg.svd(Xs, full_matrices=False)
    tol = rtol * max(Xs.shape) * s[0] if s.size else 0.0
    null = vt[s <= tol]
    if null.size:
        involved = np.flatnonzero(np.abs(null).max(axis=0) > 1e-6)
        cols = [names[i] for i in involved]
        raise RankDeficiencyError(f"design matrix is rank deficient; collinear columns: {cols}", cols)


@dataclass
class OlsFit:
    coef: np.ndarray
    resid: np.ndarray
    bread: np.ndarray
    X: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    def ssr(self) -> float:
        return float(self.resid @ self.resid)

    def cov_classical(self) -> np.ndarray:
        return self.bread * (self.ssr() / (self.n - self.k))

    def cov_hc2(self) -> np.ndarray:
        h = np.einsum("ij,jk,ik->i", self.X, self.bread, self.X)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = self.resid**2 / (1.0 - h)
        w[~np.isfinite(w)] = 0.0
        meat = (self.X * w[:, None]).T @ self.X
        return self.bread @ meat @ self.bread


def ols(X: np.ndarray, y: np.ndarray, names: Sequence[str] | None = None) -> OlsFit:
    """Least squares with an explicit rank check."""
    X = np.asarray(X, dtype=float)
    if names is not None:
        check_full_rank(X, names)
    bread = linalg.pinvh(X.T @ X)
    coef = bread @ (X.T @ y)
    return OlsFit(coef, y - X @ coef, bread, X)


def neyman(y: np.ndarray, treated: np.ndarray, control: np.ndarray) -> tuple[float, float]:
    """Difference in means and its Neyman standard error."""
    y1, y0 = y[treated], y[control]
    tau = float(y1.mean() - y0.mean())
    v = y1.var(ddof=1) / y1.size + y0.var(ddof=1) / y0.size
    return tau, float(np.sqrt(max(v, 0.0)))
