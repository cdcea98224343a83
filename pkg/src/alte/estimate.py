"""Point and variance estimation of the average latent treatment effect."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dataset import ExperimentData
from .exceptions import (
    AlteError,
    ConvergenceError,
    DegenerateDesignError,
    EstimationError,
    ValidationError,
)
from .identify import IVSystem, ScalingEstimate, _weighted_solution, lambda_combined
from .index import (
    WeightScheme,
    WsiOutcome,
    _coefficients,
    build_wsi,
    estimate_error_variances,
    make_weights,
)
from ._gmm import moment_covariance, numerical_jacobian, sandwich
from ._linalg import neyman, ols

__all__ = [
    "AlteResult",
    "dim_wsi",
    "stacked_regression",
    "ols_adjusted",
    "gmm_joint",
    "bootstrap",
    "estimate_wsi",
    "LatentEffectEstimator",
    "VARIANCE_METHODS",
]

VARIANCE_METHODS = (
    "neyman_known_lambda",
    "gmm_sandwich",
    "bootstrap",
    "hc2_robust",
    "cluster_robust",
    "classical",
)
Z975 = float(stats.norm.ppf(0.975))


def stars(p: float) -> str:
    """Significance stars at the 0.1, 0.05 and 0.01 levels."""
    if not np.isfinite(p):
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


@dataclass(eq=False)
class AlteResult:
    """Estimated average latent treatment effect.

    Attributes
    ----------
    tau_hat : float
        Estimate in units of the reference measure.
    se : float
        Standard error.
    ci95 : tuple of float
        ``tau_hat +- 1.96 se`` for analytic methods, percentile interval for
        the bootstrap.
    variance_method : str
        One of :data:`VARIANCE_METHODS`.
    estimator : str
        ``dim``, ``stacked``, ``ols_adjusted``, ``gmm_joint`` or a baseline
        tag.
    arm : str
        Treatment column contrasted with control.
    n_treated, n_control : int
    diagnostics : dict
        Weights, scaling parameters and other auxiliary output.
    flags : list of str
        Warnings.
    """

    tau_hat: float
    se: float
    variance_method: str
    estimator: str
    arm: str = "z1"
    n_treated: int = 0
    n_control: int = 0
    ci95: tuple = None
    diagnostics: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.tau_hat = float(self.tau_hat)
        self.se = float(max(self.se, 0.0)) if np.isfinite(self.se) else float("nan")
        if self.ci95 is None:
            half = Z975 * self.se
            self.ci95 = (self.tau_hat - half, self.tau_hat + half)
        self.ci95 = tuple(float(v) for v in self.ci95)

    @property
    def tstat(self) -> float:
        return self.tau_hat / self.se if self.se > 0 else float("inf") * np.sign(self.tau_hat)

    @property
    def pvalue(self) -> float:
        if self.se == 0:
            return 0.0 if self.tau_hat != 0 else 1.0
        return float(2 * stats.norm.sf(abs(self.tau_hat / self.se)))

    @property
    def stars(self) -> str:
        return stars(self.pvalue)

    def to_dict(self) -> dict:
        return {
            "tau_hat": self.tau_hat,
            "se": self.se,
            "ci95": list(self.ci95),
            "pvalue": self.pvalue,
            "stars": self.stars,
            "variance_method": self.variance_method,
            "estimator": self.estimator,
            "arm": self.arm,
            "n_treated": int(self.n_treated),
            "n_control": int(self.n_control),
            "diagnostics": _jsonable(self.diagnostics),
            "flags": list(self.flags),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


def _groups(data: ExperimentData, arm: int):
    """Treated and comparison masks; comparison is the pure control cell."""
    treated = data.treatments[:, arm] == 1
    control = data.control if data.T > 1 else ~treated
    if not treated.any() or not control.any():
        raise DegenerateDesignError(f"arm {data.treatment_names[arm]!r} or its control group is empty")
    return treated, control


def dim_wsi(wsi: WsiOutcome | np.ndarray, data: ExperimentData, arm: int | str = 0) -> AlteResult:
    """Difference in means of the index with the Neyman variance.

    Scaling parameters and weights are treated as known. With several
    arms the chosen arm is contrasted with the pure control cell and a
    ``multi_arm`` flag recommends :func:`ols_adjusted`.
    """
    a = data.treatment_index(arm)
    values = wsi.values if isinstance(wsi, WsiOutcome) else np.asarray(wsi, dtype=float)
    treated, control = _groups(data, a)
    tau, se = neyman(values, treated, control)
    flags = []
    if data.T > 1:
        flags.append("multi_arm: contrast against the pure control cell; use ols_adjusted for joint estimation")
    diag = {}
    if isinstance(wsi, WsiOutcome):
        diag = {"weights": wsi.scheme.weights, "lambda": wsi.lambda_, "weight_kind": wsi.scheme.kind}
    return AlteResult(
        tau, se, "neyman_known_lambda", "dim", data.treatment_names[a],
        int(treated.sum()), int(control.sum()), diagnostics=diag, flags=flags,
    )


def stacked_regression(
    data: ExperimentData,
    scaling,
    scheme: WeightScheme,
    arm: int | str = 0,
) -> AlteResult:
    """OLS on the stacked, scaled and weighted outcomes.

    Each unit contributes ``J`` rows ``J * omega_j * Y_ij / lambda_j`` with
    regressors ``(1, Z_i)``. The factor ``J`` makes uniform weights give the
    plain stacked regression and makes the slope equal the weighted
    difference in means for any weights. Standard errors are clustered by
    unit.
    """
    a = data.treatment_index(arm)
    lam = scaling.lambda_ if isinstance(scaling, ScalingEstimate) else np.asarray(scaling, float)
    coef = _coefficients(lam, scheme.weights, data.outcome_names)
    treated, control = _groups(data, a)
    keep = treated | control
    J = data.J
    Ys = data.outcomes[keep] * (J * coef)
    z = treated[keep].astype(float)
    m = int(keep.sum())
    y = Ys.ravel()
    zz = np.repeat(z, J)
    X = np.column_stack([np.ones(m * J), zz])
    fit = ols(X, y)
    # cluster-robust (by unit) sandwich
    scores = (X * fit.resid[:, None]).reshape(m, J, 2).sum(axis=1)
    V = fit.bread @ (scores.T @ scores) @ fit.bread
    se = float(np.sqrt(max(V[1, 1], 0.0)))
    return AlteResult(
        fit.coef[1], se, "cluster_robust", "stacked", data.treatment_names[a],
        int(treated.sum()), int(control.sum()),
        diagnostics={"weights": scheme.weights, "lambda": lam},
    )


def ols_adjusted(
    data: ExperimentData,
    wsi: WsiOutcome | np.ndarray,
    arms: Sequence[int | str] | None = None,
    covariates: Sequence[int | str] | bool | None = None,
) -> dict[str, AlteResult]:
    """Regress the index on arm indicators and covariates with HC2 errors.

    Parameters
    ----------
    data : ExperimentData
    wsi : WsiOutcome or array_like
    arms : sequence, optional
        Arms to include; all by default.
    covariates : sequence or bool, optional
        Covariates to include; ``True`` means all.

    Returns
    -------
    dict
        One :class:`AlteResult` per arm, keyed by arm label.
    """
    values = wsi.values if isinstance(wsi, WsiOutcome) else np.asarray(wsi, dtype=float)
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
    fit = ols(X, values, names)
    V = fit.cov_hc2()
    out = {}
    diag = {"covariates": [data.covariate_names[c] for c in cov_idx]}
    if isinstance(wsi, WsiOutcome):
        diag.update(weights=wsi.scheme.weights, **{"lambda": wsi.lambda_})
    for pos, a in enumerate(arm_idx, start=1):
        n1 = int(data.treatments[:, a].sum())
        out[data.treatment_names[a]] = AlteResult(
            fit.coef[pos], np.sqrt(max(V[pos, pos], 0.0)), "hc2_robust", "ols_adjusted",
            data.treatment_names[a], n1, int(data.control.sum()), diagnostics=dict(diag),
        )
    return out


class _JointSystem:
    """Full moment system for scaling, variance components and the effect."""

    def __init__(self, data, ref, roster, kind, arm, scaling_known, tau_form, fixed_weights=None, psi_fixed=None):
        self.data = data
        self.ref = ref
        self.kind = kind
        self.tau_form = tau_form
        n, J = data.n, data.J
        self.Y = data.outcomes
        self.treated, self.control = _groups(data, arm)
        self.zt = self.treated.astype(float)
        self.zc = self.control.astype(float)
        self.known = scaling_known is not None
        self.codes = data.cells
        self.C = len(data.cell_keys())
        self.cell_mask = np.stack([self.codes == c for c in range(self.C)], axis=1).astype(float)
        self.f = n / (n - self.C)
        self.pairs = [(j, k) for j in range(J) for k in range(j + 1, J)]
        self.fixed_weights = fixed_weights
        self.psi_fixed = psi_fixed

        blocks = []
        if self.known:
            self.lam_fixed = scaling_known.lambda_
            self.iv = None
            self.W_iv = np.zeros((0, 0))
        else:
            self.iv = IVSystem(data, ref, roster)
            th_iv, self.W_iv, _, _ = _weighted_solution(self.iv, "two_step")
            blocks.append(("iv", th_iv))
        self.optimal = kind != "equal" and fixed_weights is None
        if self.optimal:
            mu = np.stack([self.Y[self.codes == c].mean(axis=0) for c in range(self.C)])
            blocks.append(("mu", mu.ravel()))
            if psi_fixed is None:
                blocks.append(("psi", np.zeros(1)))
            blocks.append(("sigma2", np.zeros(J)))
        if tau_form == "ipw":
            blocks.append(("p", np.array([self.zt.mean(), self.zc.mean()])))
        else:
            blocks.append(("m", np.zeros(2)))
        blocks.append(("tau", np.zeros(1)))
        self.slices = {}
        start = 0
        for name, v in blocks:
            self.slices[name] = slice(start, start + v.size)
            start += v.size
        self.k = start
        theta = np.zeros(self.k)
        for name, v in blocks:
            theta[self.slices[name]] = v
        self.theta0 = theta

    def lam(self, theta):
        if self.known:
            return self.lam_fixed
        lam = np.ones(self.data.J)
        th = theta[self.slices["iv"]]
        for e, j in enumerate(self.iv.measures):
            lam[j] = th[2 * e + 1]
        return lam

    def psi(self, theta):
        if self.psi_fixed is not None:
            return self.psi_fixed
        return theta[self.slices["psi"]][0]

    def weights(self, theta):
        J = self.data.J
        if self.fixed_weights is not None:
            return self.fixed_weights
        if not self.optimal:
            return np.full(J, 1.0 / J)
        lam = self.lam(theta)
        s2 = theta[self.slices["sigma2"]]
        prec = lam**2 / s2
        return prec / prec.sum()

    def contributions(self, theta):
        J = self.data.J
        cols = []
        lam = self.lam(theta)
        if not self.known:
            cols.append(self.iv.contributions(theta[self.slices["iv"]]))
        if self.optimal:
            mu = theta[self.slices["mu"]].reshape(self.C, J)
            D = self.Y - mu[self.codes]
            for c in range(self.C):
                cols.append(self.cell_mask[:, [c]] * D)
            psi = self.psi(theta)
            if self.psi_fixed is None:
                prod = np.mean([D[:, j] * D[:, k] / (lam[j] * lam[k]) for j, k in self.pairs], axis=0)
                cols.append((self.f * prod - psi)[:, None])
            s2 = theta[self.slices["sigma2"]]
            cols.append(self.f * D**2 - lam**2 * psi - s2)
        w = self.weights(theta)
        ytil = self.Y @ (w / lam)
        tau = theta[self.slices["tau"]][0]
        if self.tau_form == "ipw":
            p1, p0 = theta[self.slices["p"]]
            cols.append(np.column_stack([self.zt - p1, self.zc - p0]))
            cols.append(((self.zt / p1 - self.zc / p0) * ytil - tau)[:, None])
        else:
            m1, m0 = theta[self.slices["m"]]
            cols.append(np.column_stack([self.zt * (ytil - m1), self.zc * (ytil - m0)]))
            cols.append(np.full((self.data.n, 1), m1 - m0 - tau))
        return np.column_stack(cols)

    def gbar(self, theta):
        return self.contributions(theta).mean(axis=0)

    def weight_matrix(self):
        J = self.data.J
        m_other = (self.C * J + (self.psi_fixed is None) + J if self.optimal else 0) + 3
        return linalg.block_diag(self.W_iv, np.eye(m_other))


def gmm_joint(
    data: ExperimentData,
    reference: int | str = 0,
    instruments=("treatment", "measures"),
    weights: str = "inverse_variance",
    arm: int | str = 0,
    scaling=None,
    tau_form: str = "ipw",
    max_iter: int = 50,
    tol: float = 1e-7,
) -> AlteResult:
    """Joint GMM estimate of the effect with a sandwich variance.

    The moment vector stacks the IV conditions for the scaling parameters,
    per-cell means, the latent and error variance conditions behind the
    optimal weights, the assignment probabilities and the effect
    condition. The IV block uses its two-step weighting matrix and every
    other block is exactly identified, so the point estimate coincides
    with the two-step pipeline. The variance accounts for the estimation
    of scaling parameters and weights.

    Parameters
    ----------
    data : ExperimentData
    reference : int or str
    instruments : roster
        Passed to :func:`~alte.identify.lambda_combined`.
    weights : {"inverse_variance", "equal"}
    arm : int or str
        Arm contrasted with control (the pure control cell with several
        arms).
    scaling : array_like or ScalingEstimate, optional
        Known scaling parameters; the IV block is then dropped.
    tau_form : {"ipw", "split"}
        Effect moment written with inverse assignment probabilities or as
        a difference of two arm means.
    max_iter : int
        Gauss-Newton refinement iterations.
    tol : float
        Convergence tolerance on the refinement step.

    Returns
    -------
    AlteResult
        Tagged ``gmm_sandwich``.
    """
    ref = data.measure_index(reference)
    a = data.treatment_index(arm)
    kind = {"optimal": "inverse_variance"}.get(weights, weights)
    if kind not in ("inverse_variance", "equal"):
        raise ValidationError("gmm_joint supports 'inverse_variance' and 'equal' weights")
    if kind == "inverse_variance" and data.J < 2:
        raise ValidationError("optimal weights need at least two measures")
    if tau_form not in ("ipw", "split"):
        raise ValidationError("tau_form must be 'ipw' or 'split'")
    known = None
    if scaling is not None:
        known = scaling if isinstance(scaling, ScalingEstimate) else ScalingEstimate.known(scaling, ref, data.outcome_names)
    elif data.J == 1:
        known = ScalingEstimate.known([1.0], 0, data.outcome_names)

    if known is not None:
        sc = known
    else:
        sc = lambda_combined(data, ref, instruments)
    ev = None
    fixed_weights = psi_fixed = None
    flags = list(sc.flags)
    if kind == "inverse_variance":
        ev = estimate_error_variances(data, sc)
        flags += ev.flags
        scheme = make_weights(kind, sc, ev)
        if np.any(ev.sigma2 <= 0):
            # boundary solution: weights no longer respond to the variance moments
            fixed_weights = scheme.weights
            flags.append("zero error variance: weights held fixed in the joint variance")
        elif any(f.startswith("negative latent variance") for f in ev.flags):
            psi_fixed = 0.0
    else:
        scheme = make_weights("equal", J=data.J)
    wsi = build_wsi(data, sc, scheme)
    point = dim_wsi(wsi, data, a)

    sysm = _JointSystem(data, ref, instruments, kind, a, known, tau_form, fixed_weights, psi_fixed)
    theta = sysm.theta0.copy()
    if sysm.optimal:
        if psi_fixed is None:
            theta[sysm.slices["psi"]] = ev.psi
        theta[sysm.slices["sigma2"]] = ev.sigma2
    if tau_form == "split":
        y1 = wsi.values[sysm.treated].mean()
        y0 = wsi.values[sysm.control].mean()
        theta[sysm.slices["m"]] = (y1, y0)
    theta[sysm.slices["tau"]] = point.tau_hat

    W = sysm.weight_matrix()
    for it in range(max_iter):
        G = numerical_jacobian(sysm.gbar, theta)
        A = G.T @ W @ G
        g = sysm.gbar(theta)
        try:
            step = linalg.solve(A, G.T @ W @ g, assume_a="sym")
        except linalg.LinAlgError as exc:
            raise EstimationError("G'WG is singular") from exc
        theta = theta - step
        if np.all(np.abs(step) <= tol * (1.0 + np.abs(theta))):
            break
    else:
        raise ConvergenceError(
            f"joint GMM did not converge in {max_iter} iterations",
            float(np.linalg.norm(sysm.gbar(theta))),
        )
    G = numerical_jacobian(sysm.gbar, theta)
    S = moment_covariance(sysm.contributions(theta))
    V = sandwich(G, W, S, data.n)
    it_tau = sysm.slices["tau"].start
    tau = float(theta[it_tau])
    se = float(np.sqrt(max(V[it_tau, it_tau], 0.0)))
    n1, n0 = int(sysm.treated.sum()), int(sysm.control.sum())
    return AlteResult(
        tau, se, "gmm_sandwich", "gmm_joint", data.treatment_names[a], n1, n0,
        diagnostics={
            "weights": sysm.weights(theta),
            "lambda": sysm.lam(theta),
            "weight_kind": kind,
            "scaling": sc,
            "error_variances": ev.to_dict(data.outcome_names) if ev is not None else None,
            "tau_form": tau_form,
            "pipeline_tau": point.tau_hat,
            "iterations": it + 1,
        },
        flags=flags,
    )


def _replicate(estimator, data, seed, r):
    rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
    idx = rng.integers(0, data.n, data.n)
    try:
        out = estimator(data.take(idx))
    except (AlteError, np.linalg.LinAlgError, ZeroDivisionError, FloatingPointError):
        return None
    val = out.tau_hat if isinstance(out, AlteResult) else float(out)
    return val if np.isfinite(val) else None


def bootstrap(
    estimator: Callable[[ExperimentData], AlteResult | float],
    data: ExperimentData,
    draws: int = 1000,
    seed: int = 42,
    n_jobs: int = 1,
    alpha: float = 0.05,
) -> AlteResult:
    """Nonparametric unit-resampling bootstrap.

    Parameters
    ----------
    estimator : callable
        Maps an :class:`ExperimentData` to an :class:`AlteResult` or a float.
    data : ExperimentData
    draws : int
        Number of resamples.
    seed : int
        Replicate ``r`` uses ``SeedSequence([seed, r])``, so results do not
        depend on scheduling.
    n_jobs : int
        Parallel workers (joblib); 1 runs serially.
    alpha : float
        Level of the percentile interval.

    Returns
    -------
    AlteResult
        ``se`` is the standard deviation of the replicate estimates and
        ``ci95`` the percentile interval. Failed replicates are counted in
        ``diagnostics['failures']``.
    """
    base = estimator(data)
    tau = base.tau_hat if isinstance(base, AlteResult) else float(base)
    if n_jobs == 1:
        reps = [_replicate(estimator, data, seed, r) for r in range(draws)]
    else:
        from joblib import Parallel, delayed

        reps = Parallel(n_jobs=n_jobs)(delayed(_replicate)(estimator, data, seed, r) for r in range(draws))
    vals = np.array([v for v in reps if v is not None])
    failures = draws - vals.size
    if vals.size < 2:
        raise EstimationError(f"bootstrap failed on {failures} of {draws} replicates")
    se = float(vals.std(ddof=1))
    lo, hi = np.quantile(vals, [alpha / 2, 1 - alpha / 2])
    if isinstance(base, AlteResult):
        diag = dict(base.diagnostics)
        est, arm, n1, n0, flags = base.estimator, base.arm, base.n_treated, base.n_control, list(base.flags)
    else:
        diag, est, arm, n1, n0, flags = {}, "custom", "", 0, 0, []
    diag.update(draws=int(vals.size), failures=int(failures), seed=seed)
    return AlteResult(tau, se, "bootstrap", est, arm, n1, n0, (float(lo), float(hi)), diag, flags)


def estimate_wsi(
    data: ExperimentData,
    reference: int | str = 0,
    instruments=("treatment", "measures"),
    weights: str = "inverse_variance",
    variance: str = "gmm",
    arm: int | str = 0,
    scaling=None,
    covariates: bool = False,
    draws: int = 1000,
    seed: int = 42,
    n_jobs: int = 1,
) -> AlteResult:
    """End-to-end index estimate for one arm.

    ``variance`` selects ``gmm`` (joint sandwich), ``neyman`` (scaling and
    weights treated as known), ``hc2`` (regression on all arms, optionally
    with covariates) or ``bootstrap`` (re-estimating everything).
    """
    ref = data.measure_index(reference)
    if variance == "gmm" and not covariates:
        return gmm_joint(data, ref, instruments, weights, arm, scaling)

    def pipeline(d: ExperimentData) -> AlteResult:
        if scaling is not None:
            sc = ScalingEstimate.known(scaling, ref, d.outcome_names)
        elif d.J == 1:
            sc = ScalingEstimate.known([1.0], 0, d.outcome_names)
        else:
            sc = lambda_combined(d, ref, instruments)
        kind = {"optimal": "inverse_variance"}.get(weights, weights)
        if kind == "equal" or d.J == 1:
            scheme = make_weights("equal", J=d.J)
            ev = None
        else:
            ev = estimate_error_variances(d, sc)
            scheme = make_weights(kind, sc, ev)
        wsi = build_wsi(d, sc, scheme)
        if covariates or d.T > 1 or variance == "hc2":
            res = ols_adjusted(d, wsi, covariates=covariates)[d.treatment_names[d.treatment_index(arm)]]
        else:
            res = dim_wsi(wsi, d, arm)
        res.diagnostics["scaling"] = sc
        if ev is not None:
            res.diagnostics["error_variances"] = ev.to_dict(d.outcome_names)
        res.flags.extend(sc.flags + (ev.flags if ev is not None else []))
        return res

    if variance == "bootstrap":
        return bootstrap(pipeline, data, draws, seed, n_jobs)
    if variance in ("neyman", "hc2", "gmm"):
        return pipeline(data)
    raise ValidationError(f"unknown variance method {variance!r}")


class LatentEffectEstimator(BaseEstimator):
    """Scikit-learn style estimator of the average latent treatment effect.

    Parameters
    ----------
    reference : int or str, default 0
    weights : {"inverse_variance", "equal"}, default "inverse_variance"
    instruments : roster, default ("treatment", "measures")
    variance : {"gmm", "neyman", "hc2", "bootstrap"}, default "gmm"
    arm : int or str, default 0
    scaling : array_like, optional
        Known scaling parameters.
    covariates : bool, default False
        Adjust for covariates by regression.
    draws : int, default 1000
        Bootstrap replicates.
    random_state : int, default 42
    n_jobs : int, default 1

    Attributes
    ----------
    result_ : AlteResult
    effect_ : float
    se_ : float
    """

    def __init__(
        self,
        reference=0,
        weights="inverse_variance",
        instruments=("treatment", "measures"),
        variance="gmm",
        arm=0,
        scaling=None,
        covariates=False,
        draws=1000,
        random_state=42,
        n_jobs=1,
    ):
        self.reference = reference
        self.weights = weights
        self.instruments = instruments
        self.variance = variance
        self.arm = arm
        self.scaling = scaling
        self.covariates = covariates
        self.draws = draws
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, Y, Z=None, X=None):
        """Estimate the effect from outcomes ``Y`` and assignment ``Z``."""
        data = Y if isinstance(Y, ExperimentData) else ExperimentData(Z, Y, X)
        res = estimate_wsi(
            data, self.reference, self.instruments, self.weights, self.variance,
            self.arm, self.scaling, self.covariates, self.draws, self.random_state, self.n_jobs,
        )
        self.result_ = res
        self.effect_ = res.tau_hat
        self.se_ = res.se
        self.n_features_in_ = data.J
        return self

    def predict(self, Z):
        """Predicted change in the latent outcome for assignments ``Z``."""
        check_is_fitted(self, "result_")
        z = np.asarray(Z, dtype=float)
        if z.ndim == 2:
            z = z[:, 0]
        return self.effect_ * z
