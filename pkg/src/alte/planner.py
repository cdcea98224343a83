"""Variance forecasts and budget allocation between measures and subjects."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .exceptions import ValidationError

__all__ = [
    "DesignProblem",
    "DesignSolution",
    "forecast_variance",
    "optimize_budget",
    "marginal_tables",
    "error_variance_for_reliability",
]


def forecast_variance(n1: float, n0: float, lambda_, sigma2, psi=(1.0, 1.0)) -> float:
    """Variance of the index estimator under optimal weights.

    ``psi[0]/n1 + psi[1]/n0 + (1/n1 + 1/n0) / sum_j lambda_j**2 / sigma2_j``.
    A measure with zero error variance removes the measurement term.

    Parameters
    ----------
    n1, n0 : float
        Treated and control counts.
    lambda_, sigma2 : array_like
        Scaling parameters and error variances of the measures.
    psi : pair of float
        Latent variances ``Var(eta^1)`` and ``Var(eta^0)``.
    """
    lam = np.atleast_1d(np.asarray(lambda_, dtype=float))
    s2 = np.atleast_1d(np.asarray(sigma2, dtype=float))
    if lam.shape != s2.shape:
        raise ValidationError("lambda and sigma2 must have the same length")
    if n1 <= 0 or n0 <= 0 or np.any(s2 < 0):
        raise ValidationError("arm sizes must be positive and error variances non-negative")
    psi1, psi0 = psi
    latent = psi1 / n1 + psi0 / n0
    if np.any((s2 == 0) & (lam != 0)):
        return float(latent)
    info = float(np.sum(lam**2 / s2))
    if info == 0:
        return float("inf")
    return float(latent + (1.0 / n1 + 1.0 / n0) / info)


def error_variance_for_reliability(reliability: float, latent_variance: float = 1.0, lambda_: float = 1.0) -> float:
    """Error variance giving ``lambda^2 v / (lambda^2 v + sigma2) = reliability``."""
    if not 0 < reliability <= 1:
        raise ValidationError("reliability must lie in (0, 1]")
    return float(lambda_**2 * latent_variance * (1 - reliability) / reliability)


@dataclass
class DesignProblem:
    """Budget allocation problem.

    Attributes
    ----------
    n : int
        Current number of subjects (split equally across two arms).
    J : int
        Current number of measures.
    budget : float
    cost_measure, cost_subject : float
        Marginal cost of one measure and of one subject.
    psi : tuple of float
        ``Var(eta^1)`` and ``Var(eta^0)``.
    sigma2 : float or list of float
        Error variance of each current measure; a scalar applies to all.
    lambda_ : float or list of float
        Scaling of each current measure.
    new_sigma2, new_lambda : float, optional
        Quality of added measures (defaults to the first current measure).
    """

    n: int
    J: int = 1
    budget: float = 0.0
    cost_measure: float = 1.0
    cost_subject: float = 1.0
    psi: tuple = (1.0, 1.0)
    sigma2: object = 1.0
    lambda_: object = 1.0
    new_sigma2: float | None = None
    new_lambda: float | None = None

    def __post_init__(self):
        if self.budget < 0 or self.cost_measure < 0 or self.cost_subject < 0:
            raise ValidationError("budget and costs must be non-negative")
        if self.n < 2 or self.J < 1:
            raise ValidationError("need n >= 2 and J >= 1")
        self.psi = tuple(float(v) for v in self.psi)
        s2 = np.broadcast_to(np.asarray(self.sigma2, dtype=float), (self.J,))
        lam = np.broadcast_to(np.asarray(self.lambda_, dtype=float), (self.J,))
        if np.any(s2 < 0):
            raise ValidationError("error variances must be non-negative")
        if np.any(lam**2 / np.where(s2 > 0, s2, 1.0) <= 0) and np.all(s2 > 0):
            raise ValidationError("every measure needs a positive signal-to-noise ratio")
        self._s2 = s2.copy()
        self._lam = lam.copy()

    def measures(self, extra: int) -> tuple[np.ndarray, np.ndarray]:
        s2_new = self._s2[0] if self.new_sigma2 is None else self.new_sigma2
        lam_new = self._lam[0] if self.new_lambda is None else self.new_lambda
        lam = np.concatenate([self._lam, np.full(extra, lam_new)])
        s2 = np.concatenate([self._s2, np.full(extra, s2_new)])
        return lam, s2

    def variance(self, extra_measures: int = 0, extra_subjects: int = 0) -> float:
        lam, s2 = self.measures(extra_measures)
        half = (self.n + extra_subjects) / 2
        return forecast_variance(half, half, lam, s2, self.psi)

    @classmethod
    def from_dict(cls, d: dict) -> "DesignProblem":
        keys = {f for f in cls.__dataclass_fields__}
        extra = set(d) - keys
        if extra:
            raise ValidationError(f"unknown design fields {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("sigma2", "lambda_"):
            v = d[k]
            d[k] = np.asarray(v).tolist()
        d["psi"] = list(self.psi)
        return d


@dataclass
class DesignSolution:
    """Optimal number of added measures and subjects."""

    extra_measures: int
    extra_subjects: int
    variance: float
    baseline_variance: float
    reduction: float
    cost: float
    frontier: pd.DataFrame = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "extra_measures": int(self.extra_measures),
            "extra_subjects": int(self.extra_subjects),
            "variance": float(self.variance),
            "baseline_variance": float(self.baseline_variance),
            "reduction": float(self.reduction),
            "cost": float(self.cost),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def __str__(self) -> str:
        m = "measure" if self.extra_measures == 1 else "measures"
        s = "subject" if self.extra_subjects == 1 else "subjects"
        return f"({self.extra_measures} {m}, {self.extra_subjects} {s})"


def optimize_budget(problem: DesignProblem) -> DesignSolution:
    """Exhaustive search over added measures and (even) added subjects.

    For every feasible number of extra measures the largest affordable even
    number of subjects is also scanned below, so the frontier lists every
    feasible pair. Ties go to fewer measures, then fewer subjects.
    """
    B, cm, co = problem.budget, problem.cost_measure, problem.cost_subject
    tol = 1e-9 * max(B, 1.0)
    max_j = int(np.floor((B + tol) / cm)) if cm > 0 else 0
    rows = []
    for j in range(max_j + 1):
        remaining = B - cm * j
        if co > 0:
            max_k = int(np.floor((remaining + tol) / co))
        else:
            max_k = 0
        max_k -= max_k % 2
        ks = np.arange(0, max_k + 1, 2)
        lam, s2 = problem.measures(j)
        for k in ks:
            half = (problem.n + k) / 2
            rows.append((j, int(k), forecast_variance(half, half, lam, s2, problem.psi), cm * j + co * k))
    frame = pd.DataFrame(rows, columns=["extra_measures", "extra_subjects", "variance", "cost"])
    base = problem.variance(0, 0)
    frame["reduction"] = base - frame["variance"]
    best_v = frame["variance"].min()
    close = frame[frame["variance"] <= best_v + 1e-14 * max(abs(best_v), 1.0)]
    best = close.sort_values(["extra_measures", "extra_subjects"]).iloc[0]
    return DesignSolution(
        int(best.extra_measures), int(best.extra_subjects), float(best.variance), base,
        float(base - best.variance), float(best.cost), frame,
    )


def marginal_tables(problem: DesignProblem, J_grid: Sequence[int] = (1, 2, 3, 4, 5)) -> pd.DataFrame:
    """Closed-form marginal value of measures versus subjects.

    Columns: ``J``; ``variance`` at ``J`` measures; ``delta`` (change from
    adding measure ``J+1``, equal-quality case ``-(4/n) / (J (J+1) Sigma)``);
    ``ratio`` ``delta(J+1)/delta(J)``; ``theory`` ``J/(J+2)``;
    ``subjects_per_arm_equivalent`` (extra subjects per arm with the same
    variance reduction as measure ``J+1``); ``one_third_rule_per_arm``
    (``n/4`` per arm cuts the variance by one third).
    """
    n = problem.n
    lam, s2 = problem.measures(0)
    Sigma = float(lam[0] ** 2 / s2[0]) if s2[0] > 0 else np.inf
    rows = []
    for J in J_grid:
        if J < 1:
            raise ValidationError("J must be at least 1")
        d = -(4.0 / n) / (J * (J + 1) * Sigma) if np.isfinite(Sigma) else 0.0
        d_next = -(4.0 / n) / ((J + 1) * (J + 2) * Sigma) if np.isfinite(Sigma) else 0.0
        v = (2 * (problem.psi[0] + problem.psi[1]) / n) + (4.0 / n) / (J * Sigma) if np.isfinite(Sigma) else 2 * sum(problem.psi) / n
        ratio = d_next / d if d != 0 else np.nan
        # V(n + 2m, J) = V(n, J) + delta  =>  m = n/2 * (-delta) / (V + delta)
        m = (n / 2) * (-d) / (v + d) if v + d > 0 else np.nan
        rows.append((J, v, d, ratio, J / (J + 2), m, n / 4))
    return pd.DataFrame(
        rows,
        columns=["J", "variance", "delta", "ratio", "theory", "subjects_per_arm_equivalent", "one_third_rule_per_arm"],
    )
