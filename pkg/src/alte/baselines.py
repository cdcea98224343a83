"""Reference estimators: standardized indices, principal components and SUR."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .dataset import ExperimentData
from .estimate import AlteResult, _groups, _jsonable
from .exceptions import DegenerateDesignError, ValidationError
from ._linalg import neyman, ols

__all__ = ["BaselineResult", "equal_std_index", "icw_index", "pca_index", "sur_fit"]

RIDGE = 1e-8


@dataclass(eq=False)
class BaselineResult:
    """Output of a baseline estimator.

    Attributes
    ----------
    method : str
        ``equal_std``, ``icw``, ``pca`` or ``sur``.
    effects : dict
        ``{"index": AlteResult}`` for index methods; ``{"outcome:arm":
        AlteResult}`` for SUR.
    auxiliary : dict
        Weights, loadings or the residual covariance.
    joint_test : dict or None
        Wald statistic, df and p-value (SUR only).
    flags : list of str
    """

    method: str
    effects: dict
    auxiliary: dict = field(default_factory=dict)
    joint_test: dict | None = None
    flags: list = field(default_factory=list)

    @property
    def index(self) -> AlteResult:
        if "index" not in self.effects:
            raise KeyError(f"{self.method} has no index-level effect")
        return self.effects["index"]

    @property
    def tau_hat(self) -> float:
        return self.index.tau_hat

    @property
    def se(self) -> float:
        return self.index.se

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "effects": {k: v.to_dict() for k, v in self.effects.items()},
            "auxiliary": _jsonable(self.auxiliary),
            "joint_test": _jsonable(self.joint_test),
            "flags": list(self.flags),
        }


def _index_result(values, data: ExperimentData, arm: int, method: str, aux: dict, flags: list) -> BaselineResult:
    treated, control = _groups(data, arm)
    tau, se = neyman(values, treated, control)
    res = AlteResult(
        tau, se, "neyman_known_lambda", method, data.treatment_names[arm],
        int(treated.sum()), int(control.sum()), diagnostics=dict(aux), flags=list(flags),
    )
    return BaselineResult(method, {"index": res}, aux, None, flags)


def _check_sd(sd: np.ndarray, names, where: str) -> None:
    bad = [names[j] for j in np.flatnonzero(~(sd > 0))]
    if bad:
        raise ValidationError(f"outcomes {bad} have zero standard deviation {where}")


def equal_std_index(data: ExperimentData, arm: int | str = 0) -> BaselineResult:
    """Average of outcomes z-scored by their overall mean and sd."""
    a = data.treatment_index(arm)
    Y = data.outcomes
    sd = Y.std(axis=0, ddof=1)
    _check_sd(sd, data.outcome_names, "in the full sample")
    Zs = (Y - Y.mean(axis=0)) / sd
    aux = {"weights": np.full(data.J, 1.0 / data.J), "sd": sd}
    return _index_result(Zs.mean(axis=1), data, a, "equal_std", aux, [])


def icw_index(data: ExperimentData, arm: int | str = 0) -> BaselineResult:
    """Inverse-covariance weighted index of standardized outcomes.

    Outcomes are centred at their overall mean and divided by the control
    group sd. Weights are ``S^-1 1 / (1' S^-1 1)`` with ``S`` the covariance
    of the standardized outcomes over all units. A singular ``S`` gets a
    ridge of ``1e-8 * trace(S)``.
    """
    a = data.treatment_index(arm)
    treated, control = _groups(data, a)
    Y = data.outcomes
    sd0 = Y[control].std(axis=0, ddof=1)
    _check_sd(sd0, data.outcome_names, "in the control group")
    Zs = (Y - Y.mean(axis=0)) / sd0
    S = np.atleast_2d(np.cov(Zs, rowvar=False, ddof=1))
    flags = []
    ones = np.ones(data.J)
    if np.linalg.cond(S) > 1e12:
        S = S + RIDGE * np.trace(S) * np.eye(data.J)
        flags.append("singular outcome covariance: ridge added before inversion")
    raw = linalg.solve(S, ones, assume_a="sym")
    w = raw / raw.sum()
    aux = {"weights": w, "control_sd": sd0}
    return _index_result(Zs @ w, data, a, "icw", aux, flags)


def pca_index(data: ExperimentData, arm: int | str = 0) -> BaselineResult:
    """First principal component of the demeaned outcomes.

    The component is taken from the covariance matrix and signed so the
    first outcome has a non-negative loading.
    """
    if data.J < 2:
        raise ValidationError("a principal-component index needs at least two outcomes")
    a = data.treatment_index(arm)
    Y = data.outcomes - data.outcomes.mean(axis=0)
    sd = Y.std(axis=0, ddof=1)
    _check_sd(sd, data.outcome_names, "in the full sample")
    S = np.cov(Y, rowvar=False, ddof=1)
    vals, vecs = linalg.eigh(S)
    v = vecs[:, -1]
    if v[0] < 0 or (v[0] == 0 and v[np.flatnonzero(v)[0]] < 0):
        v = -v
    aux = {"loadings": v, "explained": float(vals[-1] / vals.sum())}
    return _index_result(Y @ v, data, a, "pca", aux, [])


def sur_fit(data: ExperimentData, arms=None, covariates=None) -> BaselineResult:
    """Seemingly unrelated regressions with a shared regressor set.

    With identical regressors SUR coincides with equation-by-equation OLS.
    Standard errors use ``Sigma (X'X)^-1`` blocks and the joint Wald test
    covers every arm coefficient in every equation.

    Parameters
    ----------
    data : ExperimentData
    arms : sequence, optional
        Arms to include (all by default).
    covariates : sequence or bool, optional
        Covariates to include; ``True`` means all.
    """
    arm_idx = list(range(data.T)) if arms is None else [data.treatment_index(a) for a in arms]
    if covariates is True:
        cov_idx = list(range(data.p))
    elif not covariates:
        cov_idx = []
    else:
        cov_idx = [data.covariate_index(c) for c in covariates]
    names = ["const"] + [data.treatment_names[a] for a in arm_idx] + [data.covariate_names[c] for c in cov_idx]
    X = np.column_stack(
        [np.ones(data.n)] + [data.treatments[:, a] for a in arm_idx] + [data.covariates[:, c] for c in cov_idx]
    )
    n, k = X.shape
    if n <= k:
        raise DegenerateDesignError("too few units for the regressor set")
    fits = [ols(X, data.outcomes[:, j], names) for j in range(data.J)]
    B = np.column_stack([f.coef for f in fits])
    E = np.column_stack([f.resid for f in fits])
    Sigma = E.T @ E / (n - k)
    Sigma = (Sigma + Sigma.T) / 2
    XtXi = fits[0].bread
    effects = {}
    pos = list(range(1, 1 + len(arm_idx)))
    for j, y in enumerate(data.outcome_names):
        for p_, a in zip(pos, arm_idx):
            se = float(np.sqrt(Sigma[j, j] * XtXi[p_, p_]))
            effects[f"{y}:{data.treatment_names[a]}"] = AlteResult(
                B[p_, j], se, "classical", "sur", data.treatment_names[a],
                int(data.treatments[:, a].sum()), int(data.control.sum()),
                diagnostics={"outcome": y},
            )
    b = B[pos, :].T.ravel()  # outcome-major
    V = np.kron(Sigma, XtXi[np.ix_(pos, pos)])
    wald = float(b @ linalg.solve(V, b, assume_a="sym"))
    df = b.size
    test = {"statistic": wald, "df": df, "pvalue": float(stats.chi2.sf(wald, df))}
    aux = {"coefficients": {nm: B[i].tolist() for i, nm in enumerate(names)}, "residual_cov": Sigma,
           "regressors": names}
    return BaselineResult("sur", effects, aux, test, [])
