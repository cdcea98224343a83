"""Identification of the measurement scaling parameters.

Every measure is modelled as ``Y_j = alpha_j + lambda_j * eta + e_j`` with
the reference measure fixing ``lambda_ref = 1``. Substituting the reference
for ``eta`` gives the linear equation ``Y_j = a_j + lambda_j * Y_ref + u_j``
whose regressor is endogenous; any variable correlated with ``eta`` and
uncorrelated with the two errors is a valid instrument.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg, stats

from .dataset import ExperimentData
from .exceptions import IndexCollisionError, ValidationError, WeakInstrumentError
from ._gmm import moment_covariance

__all__ = [
    "ScalingEstimate",
    "lambda_treatment_iv",
    "lambda_measure_iv",
    "lambda_combined",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-6

Roster = Sequence[str] | str


def _cov(a: np.ndarray, b: np.ndarray) -> float:
    return float(((a - a.mean()) * (b - b.mean())).sum() / (a.size - 1))


def _first_stage(y_ref: np.ndarray, W: np.ndarray) -> tuple[float, float]:
    """R-squared and F statistic of ``y_ref`` on a constant and ``W``."""
    n, q = W.shape
    Wc = W - W.mean(axis=0)
    yc = y_ref - y_ref.mean()
    tss = float(yc @ yc)
    if tss == 0.0:
        return 0.0, 0.0
    coef, *_ = linalg.lstsq(Wc, yc)
    r2 = float(np.clip(1.0 - np.sum((yc - Wc @ coef) ** 2) / tss, 0.0, 1.0))
    dfd = n - q - 1
    if r2 >= 1.0 or dfd <= 0:
        return r2, float("inf")
    return r2, (r2 / q) / ((1.0 - r2) / dfd)


def _check_strength(y_ref: np.ndarray, W: np.ndarray, names, tol: float, what: str) -> float:
    r2, F = _first_stage(y_ref, W)
    if np.sqrt(r2) < tol:
        raise WeakInstrumentError(
            f"instrument(s) {list(names)} are numerically uncorrelated with the reference "
            f"measure for {what} (first-stage F = {F:.3g})",
            F,
        )
    return F


def lambda_treatment_iv(
    data: ExperimentData,
    j: int | str,
    reference: int | str = 0,
    covariates: bool = False,
    tol: float = DEFAULT_TOL,
) -> float:
    """Scaling parameter of measure ``j`` using treatment assignment as instrument.

    With one arm and no covariates this is ``Cov(Z, Y_j) / Cov(Z, Y_ref)``.
    With several arms, or when ``covariates`` is true, it is the two-stage
    least-squares slope of ``Y_j`` on ``Y_ref`` with all arms (and all
    covariates) as excluded instruments.

    Parameters
    ----------
    data : ExperimentData
    j, reference : int or str
        Measure to scale and the reference measure.
    covariates : bool
        Add the covariates to the instrument set.
    tol : float
        Weak-instrument tolerance on the standardized first-stage
        covariance.

    Returns
    -------
    float

    Raises
    ------
    WeakInstrumentError
        If the instruments are numerically uncorrelated with the reference.
    """
    j = data.measure_index(j)
    ref = data.measure_index(reference)
    yj, yr = data.outcomes[:, j], data.outcomes[:, ref]
    if j == ref:
        return 1.0
    W = data.treatments
    names = list(data.treatment_names)
    if covariates and data.p:
        W = np.column_stack([W, data.covariates])
        names += list(data.covariate_names)
    if W.shape[1] == 1:
        z = W[:, 0]
        czr = _cov(z, yr)
        sd = np.sqrt(_cov(z, z) * _cov(yr, yr))
        if not abs(czr) >= tol * sd:
            _, F = _first_stage(yr, W)
            raise WeakInstrumentError(
                f"|Cov({names[0]}, {data.outcome_names[ref]})| is below tolerance "
                f"(first-stage F = {F:.3g})",
                F,
            )
        return _cov(z, yj) / czr
    _check_strength(yr, W, names, tol, data.outcome_names[j])
    H = np.column_stack([np.ones(data.n), W])
    X = np.column_stack([np.ones(data.n), yr])
    Xhat = H @ linalg.lstsq(H, X)[0]
    coef = linalg.solve(Xhat.T @ X, Xhat.T @ yj)
    return float(coef[1])


def lambda_measure_iv(
    data: ExperimentData,
    j: int | str,
    k: int | str,
    reference: int | str = 0,
    tol: float = DEFAULT_TOL,
) -> float:
    """Scaling parameter of measure ``j`` using measure ``k`` as instrument.

    Returns ``Cov(Y_k, Y_j) / Cov(Y_k, Y_ref)``. This is valid when the
    measurement error of ``k`` is uncorrelated with the errors of ``j`` and
    of the reference.
    """
    j = data.measure_index(j)
    k = data.measure_index(k)
    ref = data.measure_index(reference)
    if k in (j, ref):
        raise IndexCollisionError(
            f"instrument measure {data.outcome_names[k]!r} coincides with the "
            "instrumented or reference measure"
        )
    yk, yr = data.outcomes[:, k], data.outcomes[:, ref]
    ckr = _cov(yk, yr)
    sd = np.sqrt(_cov(yk, yk) * _cov(yr, yr))
    if not abs(ckr) >= tol * sd:
        _, F = _first_stage(yr, yk[:, None])
        raise WeakInstrumentError(
            f"|Cov({data.outcome_names[k]}, {data.outcome_names[ref]})| is below tolerance "
            f"(first-stage F = {F:.3g})",
            F,
        )
    return _cov(yk, data.outcomes[:, j]) / ckr


@dataclass(eq=False)
class ScalingEstimate:
    """Estimated (or assumed) scaling parameters.

    Attributes
    ----------
    reference : int
        Position of the reference measure.
    names : tuple of str
        Outcome labels.
    lambda_ : ndarray, shape (J,)
        Scaling parameters, exactly 1 at the reference.
    intercepts : ndarray, shape (J,)
        Intercepts of the IV equations (0 at the reference).
    se : ndarray, shape (J,)
        Standard errors (0 at the reference).
    cov : ndarray, shape (J, J)
        Covariance of ``lambda_``.
    per_instrument : dict
        Just-identified estimate for every (measure, instrument) pair.
    instruments : dict
        Instrument roster used for each non-reference measure.
    first_stage_f : dict
        First-stage F statistic per non-reference measure.
    j_stat, j_df, j_pvalue : float, int, float
        Hansen overidentification test.
    weighting : str
        ``two_step``, ``identity_fallback``, ``2sls``, ``exact`` or ``known``.
    flags : list of str
        Warnings raised during estimation.
    """

    reference: int
    names: tuple[str, ...]
    lambda_: np.ndarray
    intercepts: np.ndarray
    se: np.ndarray
    cov: np.ndarray
    per_instrument: dict = field(default_factory=dict)
    instruments: dict = field(default_factory=dict)
    first_stage_f: dict = field(default_factory=dict)
    j_stat: float = 0.0
    j_df: int = 0
    j_pvalue: float = 1.0
    weighting: str = "known"
    flags: list = field(default_factory=list)

    @classmethod
    def known(cls, lambda_, reference: int = 0, names: Sequence[str] | None = None) -> "ScalingEstimate":
        """Wrap fixed scaling parameters, rescaled so the reference equals 1."""
        lam = np.asarray(lambda_, dtype=float).ravel()
        if lam[reference] == 0:
            raise ValidationError("the reference measure cannot have a zero scaling parameter")
        lam = lam / lam[reference]
        lam[reference] = 1.0
        J = lam.size
        names = tuple(names) if names is not None else tuple(f"y{i + 1}" for i in range(J))
        return cls(reference, names, lam, np.zeros(J), np.zeros(J), np.zeros((J, J)))

    @property
    def J(self) -> int:
        return self.lambda_.size

    def to_dict(self) -> dict:
        return {
            "reference": self.names[self.reference],
            "lambda": dict(zip(self.names, self.lambda_.tolist())),
            "se": dict(zip(self.names, self.se.tolist())),
            "per_instrument": [
                {"measure": m, "instrument": w, "estimate": _finite_or_none(v)}
                for (m, w), v in self.per_instrument.items()
            ],
            "instruments": {k: list(v) for k, v in self.instruments.items()},
            "first_stage_f": {k: _finite_or_none(v) for k, v in self.first_stage_f.items()},
            "j_stat": float(self.j_stat),
            "j_df": int(self.j_df),
            "j_pvalue": float(self.j_pvalue),
            "weighting": self.weighting,
            "flags": list(self.flags),
        }


def _finite_or_none(v):
    v = float(v)
    return v if np.isfinite(v) else None


def _resolve_roster(data: ExperimentData, j: int, ref: int, roster: Roster) -> list[tuple[str, np.ndarray]]:
    if isinstance(roster, str):
        roster = [s.strip() for s in roster.split(",") if s.strip()]
    cols: list[tuple[str, np.ndarray]] = []
    for token in roster:
        t = token.lower()
        if t in ("treatment", "treatments", "arms", "z"):
            cols += [(nm, data.treatments[:, i]) for i, nm in enumerate(data.treatment_names)]
        elif t in ("measures", "outcomes"):
            cols += [
                (nm, data.outcomes[:, i])
                for i, nm in enumerate(data.outcome_names)
                if i not in (j, ref)
            ]
        elif t in ("covariates", "x"):
            cols += [(nm, data.covariates[:, i]) for i, nm in enumerate(data.covariate_names)]
        elif token in data.treatment_names:
            cols.append((token, data.treatments[:, data.treatment_index(token)]))
        elif token in data.covariate_names:
            cols.append((token, data.covariates[:, data.covariate_index(token)]))
        elif token in data.outcome_names:
            i = data.measure_index(token)
            if i in (j, ref):
                raise IndexCollisionError(
                    f"instrument {token!r} coincides with the instrumented or reference measure"
                )
            cols.append((token, data.outcomes[:, i]))
        else:
            raise ValidationError(f"unknown instrument {token!r}")
    seen, out = set(), []
    for nm, c in cols:
        if nm not in seen:
            seen.add(nm)
            out.append((nm, c))
    if not out:
        raise ValidationError(
            f"empty instrument set for measure {data.outcome_names[j]!r}"
        )
    return out


class IVSystem:
    """Stacked linear IV moment conditions, one equation per non-reference measure.

    The parameter vector is ``(alpha_j, lambda_j)`` for each non-reference
    measure in order. Moment ``E[(Y_j - alpha_j - lambda_j Y_ref) H_j] = 0``
    uses ``H_j = (1, W_j)``.
    """

    def __init__(self, data: ExperimentData, reference: int, roster, tol: float = DEFAULT_TOL):
        self.data = data
        self.reference = ref = reference
        self.measures = [j for j in range(data.J) if j != ref]
        self.yref = data.outcomes[:, ref]
        self.H, self.inst_names, self.first_stage_f = [], {}, {}
        for j in self.measures:
            spec = _roster_for(roster, data, j)
            cols = _resolve_roster(data, j, ref, spec)
            names = [nm for nm, _ in cols]
            W = np.column_stack([c for _, c in cols])
            label = data.outcome_names[j]
            self.first_stage_f[label] = _check_strength(self.yref, W, names, tol, label)
            self.inst_names[label] = names
            self.H.append(np.column_stack([np.ones(data.n), W]))
        self.sizes = [h.shape[1] for h in self.H]
        self.m = int(sum(self.sizes))
        self.k = 2 * len(self.measures)
        n = data.n
        X = np.column_stack([np.ones(n), self.yref])
        self.b = np.concatenate([h.T @ data.outcomes[:, j] / n for h, j in zip(self.H, self.measures)])
        self.A = linalg.block_diag(*[h.T @ X / n for h in self.H])

    def contributions(self, theta: np.ndarray) -> np.ndarray:
        """Per-unit moment contributions, shape (n, m)."""
        out = []
        for e, (h, j) in enumerate(zip(self.H, self.measures)):
            a, lam = theta[2 * e], theta[2 * e + 1]
            u = self.data.outcomes[:, j] - a - lam * self.yref
            out.append(h * u[:, None])
        return np.column_stack(out)

    def solve(self, W: np.ndarray) -> np.ndarray:
        AW = self.A.T @ W
        return linalg.solve(AW @ self.A, AW @ self.b, assume_a="sym")

    def gbar(self, theta: np.ndarray) -> np.ndarray:
        return self.b - self.A @ theta


def _roster_for(roster, data: ExperimentData, j: int):
    if isinstance(roster, Mapping):
        for key in (j, data.outcome_names[j]):
            if key in roster:
                return roster[key]
        return roster.get("default", ("treatment",))
    return roster


def lambda_combined(
    data: ExperimentData,
    reference: int | str = 0,
    instruments: Roster | Mapping = ("treatment", "measures"),
    weighting: str = "two_step",
    tol: float = DEFAULT_TOL,
) -> ScalingEstimate:
    """Estimate all scaling parameters jointly by GMM.

    Parameters
    ----------
    data : ExperimentData
    reference : int or str
        Measure whose scale defines the latent metric.
    instruments : sequence of str or mapping
        Instrument roster. Tokens ``treatment``, ``measures`` (all measures
        other than the instrumented one and the reference) and
        ``covariates`` expand to groups of columns; any column label is
        also accepted. A mapping from measure (label or position) to
        roster sets instruments per measure, with key ``default`` for the
        rest.
    weighting : {"two_step", "2sls"}
        ``two_step`` starts from identity weighting and re-weights with the
        inverse of the robust moment covariance. ``2sls`` uses
        equation-by-equation two-stage least squares.
    tol : float
        Weak-instrument tolerance.

    Returns
    -------
    ScalingEstimate
        Includes robust standard errors and the Hansen J statistic with
        ``#moments - #parameters`` degrees of freedom.
    """
    ref = data.measure_index(reference)
    J, n = data.J, data.n
    names = data.outcome_names
    if J == 1:
        return ScalingEstimate.known([1.0], 0, names)
    sysm = IVSystem(data, ref, instruments, tol)

    theta, W, label, flags = _weighted_solution(sysm, weighting)
    g = sysm.contributions(theta)
    S = moment_covariance(g)
    G = -sysm.A
    bread = linalg.pinv(G.T @ W @ G)
    V = bread @ G.T @ W @ S @ W @ G @ bread / n

    df = sysm.m - sysm.k
    if df > 0 and _is_pd(S):
        gbar = sysm.gbar(theta)
        jstat = float(n * gbar @ linalg.solve(S, gbar, assume_a="pos"))
        pval = float(stats.chi2.sf(jstat, df))
    else:
        jstat, pval = 0.0, 1.0

    lam = np.ones(J)
    alpha = np.zeros(J)
    cov = np.zeros((J, J))
    pos = [2 * e + 1 for e in range(len(sysm.measures))]
    for e, j in enumerate(sysm.measures):
        alpha[j] = theta[2 * e]
        lam[j] = theta[2 * e + 1]
    cov[np.ix_(sysm.measures, sysm.measures)] = V[np.ix_(pos, pos)]
    se = np.sqrt(np.clip(np.diag(cov), 0, None))

    per_inst = {}
    for j in sysm.measures:
        h = sysm.H[sysm.measures.index(j)]
        for c, nm in enumerate(sysm.inst_names[names[j]]):
            w = h[:, c + 1]
            den = _cov(w, sysm.yref)
            per_inst[(names[j], nm)] = _cov(w, data.outcomes[:, j]) / den if den != 0 else float("nan")

    bad = [names[j] for j in sysm.measures if not np.isfinite(lam[j]) or lam[j] == 0]
    if bad:
        flags.append(f"non-finite or zero scaling parameter for {bad}")

    return ScalingEstimate(
        reference=ref,
        names=names,
        lambda_=lam,
        intercepts=alpha,
        se=se,
        cov=cov,
        per_instrument=per_inst,
        instruments=sysm.inst_names,
        first_stage_f=sysm.first_stage_f,
        j_stat=jstat,
        j_df=df,
        j_pvalue=pval,
        weighting=label,
        flags=flags,
    )


def _weighted_solution(sysm: IVSystem, weighting: str):
    """Point estimate, final weighting matrix, label and flags."""
    n = sysm.data.n
    flags: list[str] = []
    if weighting == "2sls":
        W = linalg.block_diag(*[linalg.pinvh(h.T @ h / n) for h in sysm.H])
        return sysm.solve(W), W, "2sls", flags
    if weighting != "two_step":
        raise ValidationError(f"unknown weighting {weighting!r}")
    W = np.eye(sysm.m)
    theta = sysm.solve(W)
    if sysm.m == sysm.k:
        return theta, W, "exact", flags
    S = moment_covariance(sysm.contributions(theta))
    if not _is_pd(S):
        flags.append("singular moment covariance; identity weighting kept")
        warnings.warn("singular GMM weighting matrix; falling back to identity weighting")
        return theta, W, "identity_fallback", flags
    W = linalg.inv(S)
    W = (W + W.T) / 2
    return sysm.solve(W), W, "two_step", flags


def _is_pd(S: np.ndarray) -> bool:
    try:
        w = linalg.eigvalsh(S)
    except linalg.LinAlgError:
        return False
    return bool(w.min() > 1e-12 * max(w.max(), 1e-300))
