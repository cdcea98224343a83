"""The weighted scaled index and the variance components behind its weights."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import ExperimentData
from .exceptions import NotPositiveDefiniteError, ScalingError, ValidationError
from .identify import ScalingEstimate, lambda_combined

__all__ = [
    "ErrorVarianceEstimate",
    "WeightScheme",
    "WsiOutcome",
    "estimate_error_variances",
    "make_weights",
    "build_wsi",
    "WeightedScaledIndex",
    "WEIGHT_KINDS",
]

WEIGHT_KINDS = ("equal", "inverse_variance", "covariance_optimal", "user")
_ALIASES = {"optimal": "inverse_variance", "ivw": "inverse_variance"}

HEYWOOD_RTOL = 1e-8


def _lambda_of(scaling) -> np.ndarray:
    if isinstance(scaling, ScalingEstimate):
        return scaling.lambda_
    return np.asarray(scaling, dtype=float).ravel()


@dataclass(eq=False)
class ErrorVarianceEstimate:
    """Measurement-error variances and the latent disturbance variance.

    Attributes
    ----------
    sigma2 : ndarray, shape (J,)
        Error variance of each measure, truncated at zero.
    psi : float
        Variance of the latent outcome within treatment cells.
    pooled : bool
        Whether moments were pooled across cells.
    source : str
        ``moment_system`` or ``structural_fit``.
    heywood : list of str
        Measures whose raw estimate was negative beyond tolerance.
    by_cell : dict
        Per-cell ``(sigma2, psi)`` when not pooled.
    """

    sigma2: np.ndarray
    psi: float
    pooled: bool = True
    source: str = "moment_system"
    heywood: list = field(default_factory=list)
    by_cell: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        names = names or [f"y{i + 1}" for i in range(self.sigma2.size)]
        return {
            "sigma2": dict(zip(names, self.sigma2.tolist())),
            "psi": float(self.psi),
            "pooled": self.pooled,
            "source": self.source,
            "heywood": list(self.heywood),
        }


def _components(C: np.ndarray, lam: np.ndarray, names, flags, heywood):
    J = lam.size
    ratios = [
        C[j, k] / (lam[j] * lam[k])
        for j in range(J)
        for k in range(j + 1, J)
        if lam[j] != 0 and lam[k] != 0
    ]
    if not ratios:
        raise ValidationError("need two measures with nonzero scaling parameters")
    psi = float(np.mean(ratios))
    if psi < 0:
        flags.append(f"negative latent variance {psi:.4g} truncated to 0")
        psi = 0.0
    s2 = np.diag(C) - lam**2 * psi
    for j in range(J):
        if s2[j] < -HEYWOOD_RTOL * max(C[j, j], 0.0):
            heywood.append(names[j])
        s2[j] = max(s2[j], 0.0)
    return s2, psi


def estimate_error_variances(
    data: ExperimentData,
    scaling,
    pooled: bool = True,
) -> ErrorVarianceEstimate:
    """Method-of-moments error variances given scaling parameters.

    Outcomes are demeaned within treatment cells. The latent variance is the
    average of ``Cov(Y_j, Y_k) / (lambda_j lambda_k)`` over measure pairs,
    and ``sigma2_j = Var(Y_j) - lambda_j**2 * psi``.

    Parameters
    ----------
    data : ExperimentData
    scaling : ScalingEstimate or array_like
        Scaling parameters (reference equal to 1).
    pooled : bool, default True
        Pool the within-cell covariance across cells. Otherwise components
        are computed per cell and ``sigma2``/``psi`` hold count-weighted
        averages.

    Returns
    -------
    ErrorVarianceEstimate
        Negative variances are set to 0; values below
        ``-1e-8 * Var(Y_j)`` are reported as Heywood cases with a warning.
    """
    lam = _lambda_of(scaling)
    if data.J < 2:
        raise ValidationError("error variances are not separable from the latent variance with J=1")
    if lam.size != data.J:
        raise ValidationError(f"expected {data.J} scaling parameters, got {lam.size}")
    Y = data.outcomes
    codes = data.cells
    keys = data.cell_keys()
    flags: list[str] = []
    heywood: list[str] = []
    by_cell = {}
    if pooled:
        D = Y.copy()
        for c in range(len(keys)):
            rows = codes == c
            D[rows] -= D[rows].mean(axis=0)
        C = D.T @ D / (data.n - len(keys))
        s2, psi = _components(C, lam, data.outcome_names, flags, heywood)
    else:
        s2 = np.zeros(data.J)
        psi = 0.0
        for c, key in enumerate(keys):
            block = Y[codes == c]
            if block.shape[0] < 2:
                raise ValidationError(f"cell {key} has fewer than two units")
            Cc = np.cov(block, rowvar=False, ddof=1).reshape(data.J, data.J)
            sc, pc = _components(Cc, lam, data.outcome_names, flags, heywood)
            by_cell[key] = (sc, pc)
            w = block.shape[0] / data.n
            s2 = s2 + w * sc
            psi += w * pc
        heywood = sorted(set(heywood))
    if heywood:
        msg = f"Heywood case: negative error variance truncated to 0 for {heywood}"
        flags.append(msg)
        warnings.warn(msg)
    return ErrorVarianceEstimate(s2, psi, pooled, "moment_system", heywood, by_cell, flags)


@dataclass(eq=False)
class WeightScheme:
    """Index weights summing to one."""

    kind: str
    weights: np.ndarray
    flags: list = field(default_factory=list)

    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        names = names or [f"y{i + 1}" for i in range(self.weights.size)]
        return {"kind": self.kind, "weights": dict(zip(names, self.weights.tolist())), "flags": list(self.flags)}


def make_weights(
    kind: str,
    scaling=None,
    errvar: ErrorVarianceEstimate | Sequence[float] | None = None,
    error_cov=None,
    weights=None,
    J: int | None = None,
) -> WeightScheme:
    """Build a weighting scheme.

    Parameters
    ----------
    kind : {"equal", "inverse_variance", "covariance_optimal", "user"}
        ``optimal`` is accepted as an alias of ``inverse_variance``.
    scaling : ScalingEstimate or array_like, optional
        Needed for all kinds except ``equal`` and ``user``.
    errvar : ErrorVarianceEstimate or array_like, optional
        Error variances, needed for ``inverse_variance`` and as the
        diagonal default of ``covariance_optimal``.
    error_cov : array_like, optional
        Full covariance of the raw measurement errors.
    weights : array_like, optional
        User weights; must sum to one.
    J : int, optional
        Number of measures when it cannot be inferred from other inputs.

    Returns
    -------
    WeightScheme
    """
    kind = _ALIASES.get(kind, kind)
    if kind not in WEIGHT_KINDS:
        raise ValidationError(f"unknown weight kind {kind!r}; choose from {WEIGHT_KINDS}")
    if kind == "user":
        w = np.asarray(weights, dtype=float).ravel()
        if not np.all(np.isfinite(w)) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError(f"user weights must be finite and sum to 1, got sum {w.sum()!r}")
        return WeightScheme("user", w)
    if kind == "equal":
        if J is None:
            J = _lambda_of(scaling).size if scaling is not None else np.size(_sigma2_of(errvar))
        return WeightScheme("equal", np.full(J, 1.0 / J))

    lam = _lambda_of(scaling)
    if kind == "inverse_variance":
        s2 = _sigma2_of(errvar)
        if s2.size != lam.size:
            raise ValidationError("scaling and error variances differ in length")
        if np.any(s2 < 0):
            raise ValidationError("error variances must be non-negative")
        noiseless = (s2 == 0) & (lam != 0)
        if noiseless.any():
            w = noiseless / noiseless.sum()
            return WeightScheme(
                "inverse_variance", w.astype(float),
                [f"noiseless measure(s) {np.flatnonzero(noiseless).tolist()} receive all weight"],
            )
        prec = lam**2 / s2
        return WeightScheme("inverse_variance", prec / prec.sum())

    # covariance_optimal
    if error_cov is None:
        error_cov = np.diag(_sigma2_of(errvar))
    E = np.asarray(error_cov, dtype=float)
    if E.shape != (lam.size, lam.size):
        raise ValidationError(f"error_cov must be {lam.size}x{lam.size}")
    if np.any(lam == 0):
        raise ScalingError("covariance-optimal weights need nonzero scaling parameters")
    Dinv = np.diag(1.0 / lam)
    Sig = Dinv @ ((E + E.T) / 2) @ Dinv
    ev = linalg.eigvalsh(Sig)
    if ev.min() <= 0:
        raise NotPositiveDefiniteError(
            f"scaled error covariance is not positive definite (smallest eigenvalue {ev.min():.6g})",
            float(ev.min()),
        )
    u = linalg.solve(Sig, np.ones(lam.size), assume_a="pos")
    return WeightScheme("covariance_optimal", u / u.sum())


def _sigma2_of(errvar) -> np.ndarray:
    if errvar is None:
        raise ValidationError("error variances are required for this weight kind")
    if isinstance(errvar, ErrorVarianceEstimate):
        return errvar.sigma2
    return np.asarray(errvar, dtype=float).ravel()


@dataclass(eq=False)
class WsiOutcome:
    """Per-unit weighted scaled index."""

    values: np.ndarray
    scheme: WeightScheme
    lambda_: np.ndarray

    @property
    def coefficients(self) -> np.ndarray:
        """Coefficient on each raw measure, ``omega_j / lambda_j``."""
        return _coefficients(self.lambda_, self.scheme.weights)


def _coefficients(lam: np.ndarray, w: np.ndarray, names=None) -> np.ndarray:
    coef = np.zeros_like(w)
    for j in range(w.size):
        if w[j] == 0:
            continue
        if lam[j] == 0:
            label = names[j] if names is not None else f"measure {j}"
            raise ScalingError(f"{label} has nonzero weight but a zero scaling parameter")
        coef[j] = w[j] / lam[j]
    return coef


def build_wsi(data: ExperimentData, scaling, scheme: WeightScheme) -> WsiOutcome:
    """Compute ``sum_j omega_j * Y_ij / lambda_j`` for every unit."""
    lam = _lambda_of(scaling)
    w = scheme.weights
    if w.size != data.J or lam.size != data.J:
        raise ValidationError(f"weights and scaling parameters must have length J={data.J}")
    coef = _coefficients(lam, w, data.outcome_names)
    if data.J == 1:
        values = data.outcomes[:, 0] * coef[0]
    else:
        values = data.outcomes @ coef
    return WsiOutcome(values, scheme, lam.copy())


def _as_data(Y, Z=None, X=None) -> ExperimentData:
    if isinstance(Y, ExperimentData):
        return Y
    if Z is None:
        raise ValidationError("treatment assignment Z is required")
    return ExperimentData(Z, Y, X)


class WeightedScaledIndex(TransformerMixin, BaseEstimator):
    """Scikit-learn transformer mapping outcome measures to the weighted scaled index.

    Parameters
    ----------
    reference : int, default 0
        Column of the reference measure.
    weights : str, default "inverse_variance"
        Any kind accepted by :func:`make_weights` except ``user``.
    instruments : sequence of str, default ("treatment", "measures")
        Roster for :func:`~alte.identify.lambda_combined`.
    scaling : array_like, optional
        Known scaling parameters. When given, no instruments are used.
    pooled : bool, default True
        Pool error-variance moments across treatment cells.
    error_cov : array_like, optional
        Error covariance for ``covariance_optimal`` weights.

    Attributes
    ----------
    scaling_ : ScalingEstimate
    lambda_ : ndarray
    error_variances_ : ErrorVarianceEstimate or None
    scheme_ : WeightScheme
    coef_ : ndarray
        Coefficient of each raw measure in the index.
    """

    def __init__(
        self,
        reference=0,
        weights="inverse_variance",
        instruments=("treatment", "measures"),
        scaling=None,
        pooled=True,
        error_cov=None,
    ):
        self.reference = reference
        self.weights = weights
        self.instruments = instruments
        self.scaling = scaling
        self.pooled = pooled
        self.error_cov = error_cov

    def fit(self, Y, Z=None, X=None):
        """Learn scaling parameters, variance components and weights.

        Parameters
        ----------
        Y : array_like of shape (n, J) or ExperimentData
        Z : array_like of shape (n,) or (n, T)
            Treatment indicators.
        X : array_like of shape (n, p), optional
            Covariates, available as instruments.
        """
        data = _as_data(Y, Z, X)
        ref = data.measure_index(self.reference)
        if self.scaling is not None:
            sc = ScalingEstimate.known(self.scaling, ref, data.outcome_names)
        elif data.J == 1:
            sc = ScalingEstimate.known([1.0], 0, data.outcome_names)
        else:
            sc = lambda_combined(data, ref, self.instruments)
        kind = _ALIASES.get(self.weights, self.weights)
        ev = None
        if kind != "equal" and data.J > 1:
            ev = estimate_error_variances(data, sc, pooled=self.pooled)
        if data.J == 1:
            scheme = WeightScheme("equal", np.ones(1))
        else:
            scheme = make_weights(kind, sc, ev, error_cov=self.error_cov, J=data.J)
        self.scaling_ = sc
        self.lambda_ = sc.lambda_
        self.error_variances_ = ev
        self.scheme_ = scheme
        self.coef_ = _coefficients(sc.lambda_, scheme.weights, data.outcome_names)
        self.n_features_in_ = data.J
        return self

    def transform(self, Y):
        """Return the index as a column vector of shape (n, 1)."""
        check_is_fitted(self, "coef_")
        Yarr = Y.outcomes if isinstance(Y, ExperimentData) else np.asarray(Y, dtype=float)
        if Yarr.ndim == 1:
            Yarr = Yarr[:, None]
        if Yarr.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} measures, got {Yarr.shape[1]}")
        return (Yarr @ self.coef_)[:, None]

    def fit_transform(self, Y, Z=None, X=None):
        return self.fit(Y, Z, X).transform(Y)

