"""Covariance-structure models for one latent outcome.

The model has observed exogenous variables ``x`` (treatment indicators and
covariates), a latent outcome ``eta = alpha + beta'x + zeta`` and measures
``Y_j = nu_j + lambda_j eta + d_j'x + e_j``. Dropping the latent variable
and giving every measure direct arrows and correlated errors yields the
saturated seemingly unrelated regression model.

Fitting minimizes a discrepancy between sample and implied moments:
``ULS`` uses ``sum vech(S - Sigma)**2`` and ``GLS`` uses
``0.5 * tr[(S^-1 (S - Sigma))^2]``. ``n * F`` is reported as chi-square.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg, optimize, stats

from .dataset import ExperimentData, MomentSummary, moments as sample_moments
from .exceptions import (
    ConvergenceError,
    DegenerateDesignError,
    EstimationError,
    NestingError,
    NotPositiveDefiniteError,
    ValidationError,
)
from ._gmm import numerical_jacobian

__all__ = [
    "StructuralModel",
    "FitResult",
    "NestedComparison",
    "latent_model",
    "sur_model",
    "implied_covariance",
    "fit",
    "compare_nested",
    "fit_multigroup",
]


@dataclass(frozen=True)
class StructuralModel:
    """Path model with at most one latent outcome.

    Parameters
    ----------
    exogenous : tuple of str
        Observed exogenous variables.
    measures : tuple of str
        Observed outcome measures.
    latent : str or None
        Name of the latent outcome; ``None`` gives a model without one.
    reference : str or None
        Measure whose loading is fixed to 1 (defaults to the first loaded
        measure).
    structural : tuple of str
        Exogenous variables with an arrow into the latent outcome.
    loadings : tuple of str or None
        Measures loading on the latent outcome (all by default).
    direct : tuple of (measure, exogenous) pairs
        Direct arrows from exogenous variables to measures.
    error_covariances : tuple of (measure, measure) pairs
        Correlated measurement errors.
    fixed : mapping
        Parameter name to fixed value, for example ``{"beta[z1]": 0.0}``.

    Notes
    -----
    Parameter names are ``phi[a,b]``, ``beta[x]``, ``lambda[y]``, ``psi``,
    ``sigma2[y]``, ``direct[y,x]`` and ``theta[y,y']``.
    """

    exogenous: tuple
    measures: tuple
    latent: str | None = "eta"
    reference: str | None = None
    structural: tuple = ()
    loadings: tuple | None = None
    direct: tuple = ()
    error_covariances: tuple = ()
    fixed: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "exogenous", tuple(self.exogenous))
        object.__setattr__(self, "measures", tuple(self.measures))
        object.__setattr__(self, "structural", tuple(self.structural))
        object.__setattr__(self, "direct", tuple(tuple(p) for p in self.direct))
        object.__setattr__(self, "error_covariances", tuple(tuple(p) for p in self.error_covariances))
        object.__setattr__(self, "fixed", dict(self.fixed))
        if not self.measures:
            raise ValidationError("a structural model needs at least one measure")
        if len(set(self.observed)) != len(self.observed):
            raise ValidationError("observed variable names must be unique")
        if self.latent is None:
            object.__setattr__(self, "loadings", ())
            object.__setattr__(self, "structural", ())
            object.__setattr__(self, "reference", None)
        else:
            loads = tuple(self.measures) if self.loadings is None else tuple(self.loadings)
            object.__setattr__(self, "loadings", loads)
            ref = self.reference if self.reference is not None else (loads[0] if loads else None)
            object.__setattr__(self, "reference", ref)
            if ref is not None and ref not in loads:
                raise ValidationError(f"reference {ref!r} must load on the latent outcome")
        for x in self.structural:
            if x not in self.exogenous:
                raise ValidationError(f"structural arrow from unknown variable {x!r}")
        for y, x in self.direct:
            if y not in self.measures or x not in self.exogenous:
                raise ValidationError(f"invalid direct arrow {x!r} -> {y!r}")
        for a, b in self.error_covariances:
            if a not in self.measures or b not in self.measures or a == b:
                raise ValidationError(f"invalid error covariance ({a!r}, {b!r})")

    @property
    def observed(self) -> tuple:
        return self.exogenous + self.measures

    @property
    def n_moments(self) -> int:
        p = len(self.observed)
        return p * (p + 1) // 2

    def parameter_names(self) -> list[str]:
        """All parameters, fixed or free, in canonical order."""
        ex, ms = self.exogenous, self.measures
        names = [f"phi[{ex[a]},{ex[b]}]" for a in range(len(ex)) for b in range(a, len(ex))]
        names += [f"beta[{x}]" for x in self.structural]
        names += [f"lambda[{y}]" for y in self.loadings if y != self.reference]
        if self.latent is not None:
            names.append("psi")
        names += [f"sigma2[{y}]" for y in ms]
        names += [f"direct[{y},{x}]" for y, x in self.direct]
        names += [f"theta[{_pair(a, b, ms)}]" for a, b in self.error_covariances]
        return names

    def free_parameters(self) -> list[str]:
        return [p for p in self.parameter_names() if p not in self.fixed]

    @property
    def df(self) -> int:
        return self.n_moments - len(self.free_parameters())

    def with_fixed(self, **values) -> "StructuralModel":
        """Copy with extra fixed parameters given as ``name=value``.

        Because brackets are not valid keyword characters, pass a dict via
        :meth:`fix` for most names.
        """
        return self.fix(values)

    def fix(self, values: Mapping[str, float]) -> "StructuralModel":
        fixed = dict(self.fixed)
        fixed.update(values)
        return _replace(self, fixed=fixed)

    # JSON grammar -------------------------------------------------------
    def to_dict(self) -> dict:
        arrows = [[x, self.latent] for x in self.structural]
        if self.latent is not None:
            arrows += [[self.latent, y] for y in self.loadings]
        arrows += [[x, y] for y, x in self.direct]
        return {
            "observed": {"exogenous": list(self.exogenous), "measures": list(self.measures)},
            "latent": self.latent,
            "reference": self.reference,
            "arrows": arrows,
            "covariances": [list(p) for p in self.error_covariances],
            "fixed": dict(self.fixed),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, spec: Mapping) -> "StructuralModel":
        """Build a model from the JSON grammar.

        Keys: ``observed`` (``exogenous``, ``measures``), ``latent``,
        ``reference``, ``arrows`` (list of ``[from, to]``), ``covariances``
        (pairs of measures with correlated errors) and ``fixed``.
        """
        try:
            obs = spec["observed"]
            ex = tuple(obs.get("exogenous", ()))
            ms = tuple(obs["measures"])
        except (KeyError, TypeError) as exc:
            raise ValidationError("model spec needs observed.exogenous and observed.measures") from exc
        latent = spec.get("latent", "eta")
        structural, loads, direct = [], [], []
        for arrow in spec.get("arrows", []):
            if len(arrow) != 2:
                raise ValidationError(f"arrow must be [from, to], got {arrow!r}")
            a, b = arrow
            if latent is not None and b == latent and a in ex:
                structural.append(a)
            elif latent is not None and a == latent and b in ms:
                loads.append(b)
            elif a in ex and b in ms:
                direct.append((b, a))
            else:
                raise ValidationError(f"unsupported arrow {a!r} -> {b!r}")
        if latent is not None and not loads:
            loads = list(ms)
        return cls(
            ex, ms, latent, spec.get("reference"), tuple(structural),
            tuple(loads) if latent is not None else None, tuple(direct),
            tuple(tuple(c) for c in spec.get("covariances", [])), dict(spec.get("fixed", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "StructuralModel":
        return cls.from_dict(json.loads(text))


def _replace(model: StructuralModel, **changes) -> StructuralModel:
    kw = dict(
        exogenous=model.exogenous, measures=model.measures, latent=model.latent,
        reference=model.reference, structural=model.structural, loadings=model.loadings,
        direct=model.direct, error_covariances=model.error_covariances, fixed=model.fixed,
    )
    kw.update(changes)
    return StructuralModel(**kw)


def _pair(a: str, b: str, order: Sequence[str]) -> str:
    ia, ib = order.index(a), order.index(b)
    return f"{a},{b}" if ia <= ib else f"{b},{a}"


def latent_model(exogenous: Sequence[str], measures: Sequence[str], reference: str | None = None,
                 structural: Sequence[str] | None = None) -> StructuralModel:
    """Single-latent model with every exogenous variable affecting the latent outcome."""
    structural = tuple(exogenous) if structural is None else tuple(structural)
    return StructuralModel(tuple(exogenous), tuple(measures), "eta", reference, structural)


def sur_model(exogenous: Sequence[str], measures: Sequence[str]) -> StructuralModel:
    """Saturated regression of every measure on every exogenous variable."""
    ms = tuple(measures)
    return StructuralModel(
        tuple(exogenous), ms, None,
        direct=tuple((y, x) for y in ms for x in exogenous),
        error_covariances=tuple((ms[a], ms[b]) for a in range(len(ms)) for b in range(a + 1, len(ms))),
    )


# ---------------------------------------------------------------------------
# parameter layout


class _Group:
    """Index arrays mapping a full parameter vector to one group's moments."""

    def __init__(self, q: int, J: int, zero: int, one: int):
        self.q, self.J = q, J
        self.phi = np.full((q, q), zero)
        self.beta = np.full(q, zero)
        self.lam = np.full(J, zero)
        self.psi = zero
        self.sig = np.full(J, zero)
        self.direct = np.full((J, q), zero)
        self.theta = np.full((J, J), zero)
        self.kappa = np.full(q, zero)
        self.alpha = zero
        self.nu = np.full(J, zero)
        self.one = one

    def implied(self, v: np.ndarray) -> np.ndarray:
        Phi = v[self.phi]
        lam = v[self.lam]
        Pi = np.outer(lam, v[self.beta]) + v[self.direct]
        Syx = Pi @ Phi
        Th = v[self.theta]
        Syy = Pi @ Phi @ Pi.T + v[self.psi] * np.outer(lam, lam) + np.diag(v[self.sig]) + Th
        top = np.hstack([Phi, Syx.T])
        bot = np.hstack([Syx, Syy])
        return np.vstack([top, bot])

    def implied_mean(self, v: np.ndarray) -> np.ndarray:
        kappa = v[self.kappa]
        lam = v[self.lam]
        Pi = np.outer(lam, v[self.beta]) + v[self.direct]
        my = v[self.nu] + lam * v[self.alpha] + Pi @ kappa
        return np.concatenate([kappa, my])


class _Layout:
    def __init__(self):
        self.names: list[str] = []
        self.index: dict[str, int] = {}

    def slot(self, name: str) -> int:
        if name not in self.index:
            self.index[name] = len(self.names)
            self.names.append(name)
        return self.index[name]

    def finalize(self, fixed: Mapping[str, float]):
        for name in fixed:
            if name not in self.index:
                raise ValidationError(f"fixed parameter {name!r} does not exist in the model")
        self.zero = self.slot("__zero__")
        self.one = self.slot("__one__")
        self.fixed = dict(fixed)
        self.fixed["__zero__"] = 0.0
        self.fixed["__one__"] = 1.0
        self.free_idx = np.array([i for i, nm in enumerate(self.names) if nm not in self.fixed], dtype=int)
        self.fixed_idx = np.array([self.index[nm] for nm in self.fixed], dtype=int)
        self.fixed_val = np.array(list(self.fixed.values()), dtype=float)

    def full(self, free: np.ndarray) -> np.ndarray:
        v = np.empty(len(self.names))
        v[self.free_idx] = free
        v[self.fixed_idx] = self.fixed_val
        return v

    @property
    def free_names(self) -> list[str]:
        return [self.names[i] for i in self.free_idx]


def _group_layout(model: StructuralModel, layout: _Layout, exog: Sequence[str], suffix: str,
                  shared: set, means: bool, ref_group: bool) -> _Group:
    """Register one group's parameters.

    ``shared`` lists parameter families (``lambda``, ``sigma2``, ``nu``)
    whose names carry no group suffix.
    """
    ms = model.measures
    q, J = len(exog), len(ms)

    def nm(base: str, family: str) -> str:
        return base if family in shared else base + suffix

    g = _Group(q, J, 0, 0)
    g.phi = np.zeros((q, q), dtype=int)
    for a in range(q):
        for b in range(a, q):
            i = layout.slot(nm(f"phi[{exog[a]},{exog[b]}]", "phi"))
            g.phi[a, b] = g.phi[b, a] = i
    g.beta = np.array([layout.slot(nm(f"beta[{x}]", "beta")) if x in model.structural else -1 for x in exog], dtype=int)
    lam = []
    for y in ms:
        if model.latent is None or y not in model.loadings:
            lam.append(-1)
        elif y == model.reference:
            lam.append(-2)
        else:
            lam.append(layout.slot(nm(f"lambda[{y}]", "lambda")))
    g.lam = np.array(lam, dtype=int)
    g.psi = layout.slot(nm("psi", "psi")) if model.latent is not None else -1
    g.sig = np.array([layout.slot(nm(f"sigma2[{y}]", "sigma2")) for y in ms], dtype=int)
    g.direct = np.full((J, q), -1, dtype=int)
    for y, x in model.direct:
        if x in exog:
            g.direct[ms.index(y), exog.index(x)] = layout.slot(nm(f"direct[{y},{x}]", "direct"))
    g.theta = np.full((J, J), -1, dtype=int)
    for a, b in model.error_covariances:
        i = layout.slot(nm(f"theta[{_pair(a, b, ms)}]", "theta"))
        ia, ib = ms.index(a), ms.index(b)
        g.theta[ia, ib] = g.theta[ib, ia] = i
    g.kappa = np.full(q, -1, dtype=int)
    g.nu = np.full(J, -1, dtype=int)
    g.alpha = -1
    if means:
        g.kappa = np.array([layout.slot(nm(f"kappa[{x}]", "kappa")) for x in exog], dtype=int)
        g.nu = np.array([layout.slot(nm(f"nu[{y}]", "nu")) for y in ms], dtype=int)
        if model.latent is not None and not ref_group:
            g.alpha = layout.slot(nm("alpha", "alpha"))
    return g


def _bind_constants(g: _Group, layout: _Layout) -> None:
    """Replace placeholder indices by the constant zero/one slots."""
    z, o = layout.zero, layout.one
    for attr in ("phi", "beta", "sig", "direct", "theta", "kappa", "nu"):
        arr = getattr(g, attr)
        arr[arr < 0] = z
    lam = g.lam
    lam[lam == -2] = o
    lam[lam < 0] = z
    if g.psi < 0:
        g.psi = z
    if g.alpha < 0:
        g.alpha = z


# ---------------------------------------------------------------------------
# results


@dataclass(eq=False)
class FitResult:
    """Outcome of a minimum-distance fit.

    Attributes
    ----------
    theta : dict
        Every parameter (free and fixed) by name.
    se : dict
        Normal-theory standard errors of free parameters.
    discrepancy : float
        Minimized ``F``.
    chi2, df, pvalue : float, int, float
        ``n * F``, moments minus free parameters and the upper tail
        probability.
    implied : ndarray or list of ndarray
        Implied covariance (one per group for multi-group fits).
    residuals : ndarray or list of ndarray
        Sample minus implied covariance.
    kind : str
        ``GLS`` or ``ULS``.
    heywood : list of str
        Variance parameters at the zero bound.
    """

    model: StructuralModel
    theta: dict
    se: dict
    discrepancy: float
    chi2: float
    df: int
    pvalue: float
    implied: object
    residuals: object
    kind: str
    n: int
    observed: tuple
    heywood: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    n_free: int = 0
    n_moments: int = 0
    grad_norm: float = 0.0
    groups: list = field(default_factory=list)

    def __getitem__(self, name: str) -> float:
        return self.theta[name]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "chi2": float(self.chi2),
            "df": int(self.df),
            "pvalue": float(self.pvalue),
            "discrepancy": float(self.discrepancy),
            "n_free": int(self.n_free),
            "n_moments": int(self.n_moments),
            "theta": {k: float(v) for k, v in self.theta.items()},
            "se": {k: (float(v) if np.isfinite(v) else None) for k, v in self.se.items()},
            "heywood": list(self.heywood),
            "flags": list(self.flags),
            "groups": [list(g) if isinstance(g, tuple) else g for g in self.groups],
            "model": self.model.to_dict(),
        }


@dataclass(eq=False)
class NestedComparison:
    """Chi-square difference test between nested fits."""

    chi2_diff: float
    df_diff: int
    pvalue: float
    restricted: FitResult
    free: FitResult

    def to_dict(self) -> dict:
        return {
            "chi2_diff": float(self.chi2_diff),
            "df_diff": int(self.df_diff),
            "pvalue": float(self.pvalue),
            "restricted": {"chi2": self.restricted.chi2, "df": self.restricted.df},
            "free": {"chi2": self.free.chi2, "df": self.free.df},
        }


# ---------------------------------------------------------------------------
# implied moments


def implied_covariance(model: StructuralModel, theta) -> np.ndarray:
    """Implied covariance of ``model.observed`` (exogenous then measures).

    Parameters
    ----------
    model : StructuralModel
    theta : mapping or array_like
        Parameter values by name, or a vector ordered like
        ``model.free_parameters()``. Fixed parameters take their fixed
        values.
    """
    layout = _Layout()
    g = _group_layout(model, layout, model.exogenous, "", set(), False, True)
    layout.finalize(model.fixed)
    _bind_constants(g, layout)
    if isinstance(theta, Mapping):
        v = np.zeros(len(layout.names))
        for nm_, i in layout.index.items():
            if nm_ in theta:
                v[i] = theta[nm_]
            elif nm_ not in layout.fixed:
                raise ValidationError(f"missing parameter {nm_!r}")
        v[layout.fixed_idx] = layout.fixed_val
    else:
        free = np.asarray(theta, dtype=float).ravel()
        if free.size != layout.free_idx.size:
            raise ValidationError(f"expected {layout.free_idx.size} free parameters, got {free.size}")
        v = layout.full(free)
    return g.implied(v)


# ---------------------------------------------------------------------------
# fitting machinery


def _vech_index(p: int):
    return np.triu_indices(p)


def _gamma(S: np.ndarray) -> np.ndarray:
    """Normal-theory covariance of ``sqrt(n) vech(S)``."""
    iu, ju = _vech_index(S.shape[0])
    return S[np.ix_(iu, iu)] * S[np.ix_(ju, ju)] + S[np.ix_(iu, ju)] * S[np.ix_(ju, iu)]


class _Problem:
    def __init__(self, layout: _Layout, groups: list[_Group], S_list, m_list, n_list, kind: str, means: bool):
        self.layout = layout
        self.groups = groups
        self.S = S_list
        self.m = m_list
        self.n = n_list
        self.N = int(sum(n_list))
        self.kind = kind
        self.means = means
        self.w = [np.sqrt(ng) for ng in n_list]
        self.L = []
        for S in S_list:
            if kind == "GLS":
                try:
                    Sinv = linalg.inv(S)
                    self.L.append(linalg.cholesky((Sinv + Sinv.T) / 2, lower=True))
                except linalg.LinAlgError as exc:
                    ev = float(linalg.eigvalsh(S).min())
                    raise NotPositiveDefiniteError(
                        f"sample covariance is not positive definite (smallest eigenvalue {ev:.3g}); use ULS",
                        ev,
                    ) from exc
            else:
                self.L.append(None)
        self.iu = [_vech_index(S.shape[0]) for S in S_list]

    def residuals(self, free: np.ndarray) -> np.ndarray:
        v = self.layout.full(free)
        out = []
        for g, S, m, L, w, iu in zip(self.groups, self.S, self.m, self.L, self.w, self.iu):
            R = S - g.implied(v)
            if self.kind == "GLS":
                out.append(w * (L.T @ R @ L).ravel() / np.sqrt(2.0))
                if self.means:
                    out.append(w * (L.T @ (m - g.implied_mean(v))))
            else:
                out.append(w * R[iu])
                if self.means:
                    out.append(w * (m - g.implied_mean(v)))
        return np.concatenate(out)

    def moment_vector(self, free: np.ndarray, g_idx: int) -> np.ndarray:
        v = self.layout.full(free)
        g = self.groups[g_idx]
        Sig = g.implied(v)
        out = Sig[self.iu[g_idx]]
        if self.means:
            out = np.concatenate([out, g.implied_mean(v)])
        return out

    def covariance(self, free: np.ndarray) -> np.ndarray:
        """Sandwich covariance of the free parameters under normal theory."""
        k = free.size
        A = np.zeros((k, k))
        B = np.zeros((k, k))
        for gi, (S, ng) in enumerate(zip(self.S, self.n)):
            D = numerical_jacobian(lambda t: self.moment_vector(t, gi), free)
            Gam = _gamma(S)
            if self.means:
                Gam = linalg.block_diag(Gam, S)
            if self.kind == "GLS":
                W = linalg.pinvh(Gam)
            else:
                W = np.eye(Gam.shape[0])
            A += ng * D.T @ W @ D
            B += ng * D.T @ W @ Gam @ W @ D
        Ai = linalg.pinvh(A)
        return Ai @ B @ Ai


def _start_values(model: StructuralModel, layout: _Layout, exog, S: np.ndarray, m: np.ndarray | None,
                  start: dict, suffix: str, shared: set, ref_group: bool) -> None:
    """Consistent starting values from moment ratios for one group."""
    ms = model.measures
    q, J = len(exog), len(ms)
    Sxx = S[:q, :q]
    Syx = S[q:, :q]
    Syy = S[q:, q:]

    def put(base, family, value):
        name = base if family in shared else base + suffix
        if name in layout.index and name not in start:
            start[name] = float(value)

    if q:
        Pi = linalg.lstsq(Sxx, Syx.T)[0].T
        C = Syy - Pi @ Sxx @ Pi.T
    else:
        Pi = np.zeros((J, 0))
        C = Syy.copy()
    for a in range(q):
        for b in range(a, q):
            put(f"phi[{exog[a]},{exog[b]}]", "phi", Sxx[a, b])

    lam = np.zeros(J)
    if model.latent is not None:
        r = ms.index(model.reference)
        for j, y in enumerate(ms):
            if y not in model.loadings:
                continue
            if j == r:
                lam[j] = 1.0
                continue
            sidx = [exog.index(x) for x in model.structural if x in exog]
            pr = Pi[r, sidx] if sidx else np.zeros(0)
            others = [k for k in range(J) if k not in (j, r) and ms[k] in model.loadings]
            # measure ratios do not depend on treatment strength, so prefer them
            ratios = [C[k, j] / C[k, r] for k in others
                      if abs(C[k, r]) > 0.05 * np.sqrt(max(C[k, k] * C[r, r], 1e-300))]
            if ratios:
                lam[j] = float(np.median(ratios))
            elif pr.size and pr @ pr > 1e-12 * max(Syy[r, r], 1e-300):
                lam[j] = float(Pi[j, sidx] @ pr / (pr @ pr))
            else:
                lam[j] = float(np.sqrt(max(C[j, j], 1e-12) / max(C[r, r], 1e-12)))
            put(f"lambda[{y}]", "lambda", lam[j])
        sidx = [exog.index(x) for x in model.structural if x in exog]
        if sidx:
            Sss = Sxx[np.ix_(sidx, sidx)]
            beta = linalg.lstsq(Sss, Syx[r, sidx])[0]
            for x, b in zip([exog[i] for i in sidx], beta):
                put(f"beta[{x}]", "beta", b)
        loaded = [j for j in range(J) if ms[j] in model.loadings and lam[j] != 0]
        ratios = [C[j, k] / (lam[j] * lam[k]) for a, j in enumerate(loaded) for k in loaded[a + 1:]]
        psi = float(np.mean(ratios)) if ratios else 0.5 * C[r, r]
        psi = min(max(psi, 0.05 * C[r, r]), 0.95 * C[r, r]) if C[r, r] > 0 else 0.0
        put("psi", "psi", psi)
    else:
        psi = 0.0
    for j, y in enumerate(ms):
        put(f"sigma2[{y}]", "sigma2", max(C[j, j] - lam[j] ** 2 * psi, 0.05 * C[j, j]))
    for y, x in model.direct:
        if x in exog:
            put(f"direct[{y},{x}]", "direct", Pi[ms.index(y), exog.index(x)] if model.latent is None else 0.0)
    for a, b in model.error_covariances:
        val = C[ms.index(a), ms.index(b)] if model.latent is None else 0.0
        put(f"theta[{_pair(a, b, ms)}]", "theta", val)
    if m is not None:
        mx, my = m[:q], m[q:]
        for x, v in zip(exog, mx):
            put(f"kappa[{x}]", "kappa", v)
        sidx = [exog.index(x) for x in model.structural if x in exog]
        eta_mean_base = 0.0
        if model.latent is not None and sidx:
            eta_mean_base = sum(start.get(f"beta[{exog[i]}]" + ("" if "beta" in shared else suffix), 0.0) * mx[i] for i in sidx)
        if ref_group:
            for j, y in enumerate(ms):
                put(f"nu[{y}]", "nu", my[j] - lam[j] * eta_mean_base - Pi[j] @ mx * (model.latent is None))
        elif model.latent is not None:
            r = ms.index(model.reference)
            nu_r = start.get(f"nu[{model.reference}]" + ("" if "nu" in shared else suffix), my[r])
            put("alpha", "alpha", my[r] - nu_r - eta_mean_base)


def _bounds(layout: _Layout) -> tuple[np.ndarray, np.ndarray]:
    lo = np.full(layout.free_idx.size, -np.inf)
    hi = np.full(layout.free_idx.size, np.inf)
    for k, nm_ in enumerate(layout.free_names):
        base = nm_.split("@")[0]
        if base == "psi" or base.startswith("sigma2["):
            lo[k] = 0.0
        elif base.startswith("phi["):
            a, b = base[4:-1].split(",")
            if a == b:
                lo[k] = 0.0
    return lo, hi


def _solve(problem: _Problem, start: dict, model: StructuralModel, observed, groups_meta) -> FitResult:
    layout = problem.layout
    x0 = np.array([start.get(nm_, 0.0) for nm_ in layout.free_names])
    lo, hi = _bounds(layout)
    x0 = np.clip(x0, lo + 1e-8 * (np.isfinite(lo)), hi)
    if layout.free_idx.size == 0:
        xhat = x0
        resid = problem.residuals(xhat)
        grad = 0.0
    else:
        sol = optimize.least_squares(
            problem.residuals, x0, bounds=(lo, hi), method="trf",
            x_scale="jac", xtol=1e-14, ftol=1e-14, gtol=1e-12, max_nfev=2000 * (x0.size + 1),
        )
        xhat = sol.x
        resid = sol.fun
        free_dir = ~(((xhat - lo) <= 1e-10) | ((hi - xhat) <= 1e-10))
        g = sol.jac.T @ resid
        grad = float(np.linalg.norm(g[free_dir])) if free_dir.any() else 0.0
        scale = max(1.0, float(resid @ resid))
        if sol.status <= 0 or grad > 1e-4 * scale:
            raise ConvergenceError(
                f"structural fit did not converge ({sol.message}); gradient norm {grad:.3g}", grad
            )
    chi2 = float(resid @ resid)
    N = problem.N
    F = chi2 / N
    n_mom = sum(len(iu[0]) for iu in problem.iu) + (sum(S.shape[0] for S in problem.S) if problem.means else 0)
    df = n_mom - layout.free_idx.size
    if df < 0:
        raise ValidationError(f"model has {layout.free_idx.size} free parameters but only {n_mom} moments")
    pval = float(stats.chi2.sf(chi2, df)) if df > 0 else 1.0
    v = layout.full(xhat)
    theta = {nm_: float(v[i]) for nm_, i in layout.index.items() if not nm_.startswith("__")}
    try:
        cov = problem.covariance(xhat)
        se_vals = np.sqrt(np.clip(np.diag(cov), 0, None))
    except (linalg.LinAlgError, ValueError):
        se_vals = np.full(xhat.size, np.nan)
    se = dict(zip(layout.free_names, se_vals.tolist()))
    heywood = []
    for k, nm_ in enumerate(layout.free_names):
        base = nm_.split("@")[0]
        if (base == "psi" or base.startswith("sigma2[")) and xhat[k] <= 1e-8 * max(1.0, max(float(np.max(np.diag(S))) for S in problem.S)):
            heywood.append(nm_)
    flags = []
    if heywood:
        flags.append(f"Heywood case: {heywood} at the zero bound")
    if problem.kind == "ULS" and df > 0:
        flags.append("ULS chi-square is not asymptotically chi-square distributed")
    implied = [g.implied(v) for g in problem.groups]
    residuals = [S - I for S, I in zip(problem.S, implied)]
    if len(implied) == 1:
        implied, residuals = implied[0], residuals[0]
    return FitResult(
        model, theta, se, F, chi2, df, pval, implied, residuals, problem.kind, N, tuple(observed),
        heywood, flags, int(layout.free_idx.size), int(n_mom), grad, groups_meta,
    )


def _moments_for(observed: Sequence[str], data) -> tuple[np.ndarray, np.ndarray, int]:
    if isinstance(data, MomentSummary):
        mom = data
    elif isinstance(data, ExperimentData):
        mom = sample_moments(data)
    else:
        raise ValidationError("data must be ExperimentData or MomentSummary")
    missing = [c for c in observed if c not in mom.columns]
    if missing:
        raise ValidationError(f"variables {missing} are not in the data")
    idx = [mom.columns.index(c) for c in observed]
    return mom.cov[np.ix_(idx, idx)], mom.mean[idx], mom.n


def fit(model: StructuralModel, data, kind: str = "GLS") -> FitResult:
    """Fit a structural model by minimum distance.

    Parameters
    ----------
    model : StructuralModel
    data : ExperimentData or MomentSummary
        Observed variables are matched by label.
    kind : {"GLS", "ULS"}
        Discrepancy function.

    Returns
    -------
    FitResult
    """
    kind = kind.upper()
    if kind not in ("GLS", "ULS"):
        raise ValidationError("kind must be 'GLS' or 'ULS'")
    if model.df < 0:
        raise ValidationError(f"model is under-identified by moment count (df = {model.df})")
    S, m, n = _moments_for(model.observed, data)
    layout = _Layout()
    g = _group_layout(model, layout, model.exogenous, "", set(), False, True)
    layout.finalize(model.fixed)
    _bind_constants(g, layout)
    start: dict = {}
    _start_values(model, layout, model.exogenous, S, None, start, "", set(), True)
    problem = _Problem(layout, [g], [S], [m], [n], kind, False)
    return _solve(problem, start, model, model.observed, [])


def compare_nested(restricted, free, data=None, kind: str = "GLS") -> NestedComparison:
    """Chi-square difference test of a restricted model against a freer one.

    ``restricted`` and ``free`` may be models (fitted here on ``data``) or
    existing :class:`FitResult` objects.
    """
    fr = restricted if isinstance(restricted, FitResult) else fit(restricted, data, kind)
    ff = free if isinstance(free, FitResult) else fit(free, data, kind)
    if set(fr.observed) != set(ff.observed) or fr.n != ff.n:
        raise NestingError("models are fitted to different observed variables or samples")
    if fr.n_moments != ff.n_moments:
        raise NestingError("models use different moment sets")
    df = fr.df - ff.df
    diff = fr.chi2 - ff.chi2
    tol = 1e-6 * (1.0 + abs(fr.chi2) + abs(ff.chi2))
    if df < 0:
        raise NestingError("the restricted model has fewer degrees of freedom than the free model")
    if diff < -tol or (df == 0 and abs(diff) > tol):
        raise NestingError("models are not nested: the restricted model fits better")
    diff = max(diff, 0.0)
    p = float(stats.chi2.sf(diff, df)) if df > 0 else 1.0
    return NestedComparison(diff, df, p, fr, ff)


def fit_multigroup(
    model: StructuralModel,
    data: ExperimentData,
    grouping: str | None = "cell",
    equal_lambda: bool = True,
    equal_sigma: bool = True,
    kind: str = "GLS",
) -> FitResult:
    """Fit a model jointly across groups with a mean structure.

    Each group has its own exogenous moments, structural coefficients,
    latent variance and latent mean (``alpha``, zero in the first group).
    Measure intercepts are shared; loadings and error variances are shared
    when the corresponding flag is set.

    Parameters
    ----------
    model : StructuralModel
    data : ExperimentData
    grouping : {"cell", None}
        ``cell`` groups units by treatment cell and drops treatment
        indicators from the exogenous set. ``None`` fits one group.
    equal_lambda, equal_sigma : bool
        Cross-group equality constraints.
    kind : {"GLS", "ULS"}

    Returns
    -------
    FitResult
        ``groups`` lists the group keys; ``implied`` and ``residuals`` hold
        one matrix per group.
    """
    kind = kind.upper()
    if grouping is None:
        exog = list(model.exogenous)
        codes = np.zeros(data.n, dtype=int)
        keys = ["all"]
    elif grouping == "cell":
        exog = [x for x in model.exogenous if x not in data.treatment_names]
        codes = data.cells
        keys = data.cell_keys()
    else:
        raise ValidationError("grouping must be 'cell' or None")
    sub = _replace(
        model,
        exogenous=tuple(exog),
        structural=tuple(x for x in model.structural if x in exog),
        direct=tuple((y, x) for y, x in model.direct if x in exog),
    )
    frame = data.to_frame()
    observed = list(sub.observed)
    shared = {"nu"}
    if equal_lambda:
        shared.add("lambda")
    if equal_sigma:
        shared.add("sigma2")
    layout = _Layout()
    groups, S_list, m_list, n_list = [], [], [], []
    p = len(observed)
    for gi, key in enumerate(keys):
        block = frame.loc[codes == gi, observed].to_numpy()
        ng = block.shape[0]
        if ng == 0:
            raise DegenerateDesignError(f"group {key} is empty")
        if ng < p * (p + 1) // 2 + p:
            raise ValidationError(f"group {key} has {ng} units, fewer than its {p * (p + 1) // 2 + p} moments")
        S_list.append(np.cov(block, rowvar=False, ddof=1).reshape(p, p))
        m_list.append(block.mean(axis=0))
        n_list.append(ng)
        groups.append(_group_layout(sub, layout, exog, f"@{gi}", shared, True, gi == 0))
    fixed = {}
    for name, val in sub.fixed.items():
        hits = [nm_ for nm_ in layout.names if nm_ == name or nm_.split("@")[0] == name]
        for h in hits:
            fixed[h] = val
    layout.finalize(fixed)
    for g in groups:
        _bind_constants(g, layout)
    start: dict = {}
    for gi in range(len(keys)):
        _start_values(sub, layout, exog, S_list[gi], m_list[gi], start, f"@{gi}", shared, gi == 0)
    problem = _Problem(layout, groups, S_list, m_list, n_list, kind, True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return _solve(problem, start, sub, observed, list(keys))
