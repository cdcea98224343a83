"""Data-generating processes and a Monte Carlo engine.

Replicate ``r`` of a run with seed ``s`` draws from
``numpy.random.default_rng(SeedSequence([s, r]))``, so every aggregate is
reproducible and independent of how replicates are scheduled.
"""

from __future__ import annotations

import copy
import json
import time
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .baselines import equal_std_index, icw_index, pca_index
from .bridge import alte_with_bridges
from .dataset import ExperimentData
from .estimate import dim_wsi, estimate_wsi, gmm_joint
from .exceptions import AlteError, ValidationError
from .identify import ScalingEstimate
from .index import build_wsi, estimate_error_variances, make_weights
from .planner import forecast_variance
from .structural import fit as sem_fit, latent_model

__all__ = [
    "DgpSpec",
    "McReport",
    "ESTIMATORS",
    "generate",
    "run_mc",
    "run_grid",
    "load_spec",
    "builtin_spec",
    "builtin_spec_obj",
    "list_builtin_specs",
    "study_exclusion_violation",
    "study_nonlinearity",
    "study_variance_reduction",
    "study_bridge",
    "study_linearization",
]

TRANSFORMS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda e: e,
    "quadratic": np.square,
    "exponential": np.exp,
}


def _normal_law(d: Mapping, what: str) -> tuple[float, float]:
    if "variance" in d and "sd" in d:
        raise ValidationError(f"{what}: give sd or variance, not both")
    mean = float(d.get("mean", 0.0))
    sd = float(np.sqrt(d["variance"])) if "variance" in d else float(d.get("sd", 1.0))
    if not np.isfinite(sd) or sd < 0:
        raise ValidationError(f"{what}: sd must be finite and non-negative")
    return mean, sd


@dataclass
class DgpSpec:
    """Simulation design.

    Attributes
    ----------
    name : str
    n : int
        Units per dataset.
    lambda_ : tuple of float
        Scaling of each measure (JSON key ``lambda``).
    errors : tuple of float
        Error standard deviation of each measure. JSON entries are
        ``{"sd": s}`` or ``{"variance": v}``.
    latent : dict
        ``{"control": {"mean", "sd"}, "treated": {"mean", "sd"}, "rho"}``;
        ``rho`` is the correlation of the potential outcomes.
    intercepts : tuple of float
    reference : int
        Measure whose scale defines the effect.
    treated_share : float
        Complete randomization assigns ``round(n * share)`` units to treatment.
    leak : tuple of float
        Direct effect of treatment on each measure.
    transforms : tuple of str
        ``identity``, ``quadratic`` or ``exponential`` applied to the latent
        outcome before scaling.
    binarize : tuple of str or None
        ``below_mean`` or ``above_mean`` turns a measure into an indicator
        relative to its sample mean.
    error_corr : list of list, optional
        Correlation matrix of the errors.
    covariate : dict, optional
        ``{"name", "sd", "effect"}``: a normal covariate shifting the latent
        outcome.
    irt : dict, optional
        ``{"items", "indices", "a": [lo, hi], "b_sd", "c"}``. Measures become
        sums of 3PL binary items split into ``indices`` equal groups.
    """

    name: str = "custom"
    n: int = 500
    lambda_: tuple = (1.0,)
    errors: tuple = (1.0,)
    latent: dict = field(default_factory=lambda: {
        "control": {"mean": 0.0, "sd": 1.0}, "treated": {"mean": 1.0, "sd": 1.0}, "rho": 1.0})
    intercepts: tuple | None = None
    reference: int = 0
    treated_share: float = 0.5
    leak: tuple | None = None
    transforms: tuple | None = None
    binarize: tuple | None = None
    error_corr: list | None = None
    covariate: dict | None = None
    irt: dict | None = None
    notes: str = ""

    def __post_init__(self):
        self.lambda_ = tuple(float(v) for v in self.lambda_)
        J = self.J
        self.errors = tuple(float(v) for v in self.errors)
        self.intercepts = tuple(float(v) for v in (self.intercepts or [0.0] * J))
        self.leak = tuple(float(v) for v in (self.leak or [0.0] * J))
        self.transforms = tuple(self.transforms or ["identity"] * J)
        self.binarize = tuple(self.binarize or [None] * J)
        for nm, seq in (("errors", self.errors), ("intercepts", self.intercepts), ("leak", self.leak),
                        ("transforms", self.transforms), ("binarize", self.binarize)):
            if len(seq) != J:
                raise ValidationError(f"{nm} has {len(seq)} entries for {J} measures")
        if any(t not in TRANSFORMS for t in self.transforms):
            raise ValidationError(f"transforms must be among {sorted(TRANSFORMS)}")
        if any(b not in (None, "below_mean", "above_mean") for b in self.binarize):
            raise ValidationError("binarize entries must be null, 'below_mean' or 'above_mean'")
        if not np.all(np.isfinite(self.lambda_)) or any(s < 0 for s in self.errors):
            raise ValidationError("lambda must be finite and error sds non-negative")
        if self.n < 4:
            raise ValidationError("n must be at least 4")
        if not 0 < self.treated_share < 1:
            raise ValidationError("treated_share must lie in (0, 1)")
        if not 0 <= self.reference < J:
            raise ValidationError("reference must index a measure")
        self.m0, self.s0 = _normal_law(self.latent.get("control", {}), "latent.control")
        self.m1, self.s1 = _normal_law(self.latent.get("treated", {}), "latent.treated")
        self.rho = float(self.latent.get("rho", 1.0))
        if not -1 <= self.rho <= 1:
            raise ValidationError("latent.rho must lie in [-1, 1]")
        if self.error_corr is not None:
            R = np.asarray(self.error_corr, dtype=float)
            if R.shape != (J, J) or not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() < -1e-12:
                raise ValidationError("error_corr must be a valid J x J correlation matrix")
        if self.irt is not None:
            k = int(self.irt.get("items", 0))
            g = int(self.irt.get("indices", 2))
            if k < g or k % g:
                raise ValidationError("irt.items must be a positive multiple of irt.indices")
            if g != J:
                raise ValidationError("irt.indices must equal the number of measures")

    @property
    def J(self) -> int:
        return len(self.lambda_)

    @property
    def alte(self) -> float:
        """True effect on the reference measure's scale."""
        return self.lambda_[self.reference] * (self.m1 - self.m0)

    @classmethod
    def from_dict(cls, d: Mapping) -> "DgpSpec":
        d = dict(d)
        for key in ("grid", "estimators", "replicates", "seed", "alpha", "estimator_options"):
            d.pop(key, None)
        if "lambda" in d:
            d["lambda_"] = d.pop("lambda")
        if "errors" in d:
            d["errors"] = [_normal_law(e, "errors")[1] if isinstance(e, Mapping) else float(e) for e in d["errors"]]
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown spec fields {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = {
            "name": self.name, "n": self.n, "lambda": list(self.lambda_),
            "errors": [{"sd": s} for s in self.errors], "latent": copy.deepcopy(self.latent),
            "intercepts": list(self.intercepts), "reference": self.reference,
            "treated_share": self.treated_share, "leak": list(self.leak),
            "transforms": list(self.transforms), "binarize": list(self.binarize),
        }
        for key in ("error_corr", "covariate", "irt"):
            if getattr(self, key) is not None:
                out[key] = copy.deepcopy(getattr(self, key))
        if self.notes:
            out["notes"] = self.notes
        return out

    def replace(self, **changes) -> "DgpSpec":
        d = self.to_dict()
        for k, v in changes.items():
            d["lambda" if k == "lambda_" else k] = v
        if "errors" in changes:
            d["errors"] = [{"sd": float(s)} for s in changes["errors"]]
        return DgpSpec.from_dict(d)

    def with_path(self, path: str, value) -> "DgpSpec":
        """Copy with a dotted path such as ``latent.treated.mean`` set."""
        d = self.to_dict()
        keys = path.split(".")
        node = d
        for k in keys[:-1]:
            node = node[int(k)] if isinstance(node, list) else node.setdefault(k, {})
        last = keys[-1]
        if isinstance(node, list):
            node[int(last)] = value
        else:
            node[last] = value
        return DgpSpec.from_dict(d)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    if isinstance(seed, (list, tuple)):
        return np.random.default_rng(np.random.SeedSequence(list(seed)))
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def generate(spec: DgpSpec, seed=42, return_latent: bool = False):
    """Draw one dataset.

    Parameters
    ----------
    spec : DgpSpec
    seed : int, sequence of int, SeedSequence or Generator
    return_latent : bool
        Also return the realized latent outcome.

    Returns
    -------
    ExperimentData or (ExperimentData, ndarray)
    """
    rng = _rng(seed)
    n, J = spec.n, spec.J
    n1 = int(round(n * spec.treated_share))
    n1 = min(max(n1, 1), n - 1)
    z = np.zeros(n)
    z[rng.permutation(n)[:n1]] = 1.0
    u0 = rng.standard_normal(n)
    u1 = rng.standard_normal(n)
    eta0 = spec.m0 + spec.s0 * u0
    eta1 = spec.m1 + spec.s1 * (spec.rho * u0 + np.sqrt(max(1 - spec.rho**2, 0.0)) * u1)
    X = None
    cov_names = None
    if spec.covariate is not None:
        x = rng.standard_normal(n) * float(spec.covariate.get("sd", 1.0))
        shift = float(spec.covariate.get("effect", 1.0)) * x
        eta0, eta1 = eta0 + shift, eta1 + shift
        X = x[:, None]
        cov_names = [spec.covariate.get("name", "x1")]
    eta = np.where(z == 1, eta1, eta0)
    if spec.irt is not None:
        Y = _irt_indices(spec.irt, eta, rng)
    else:
        E = rng.standard_normal((n, J))
        if spec.error_corr is not None:
            L = np.linalg.cholesky(np.asarray(spec.error_corr, dtype=float) + 1e-15 * np.eye(J))
            E = E @ L.T
        E = E * np.asarray(spec.errors)
        Y = np.empty((n, J))
        for j in range(J):
            sig = TRANSFORMS[spec.transforms[j]](eta)
            Y[:, j] = spec.intercepts[j] + spec.lambda_[j] * sig + spec.leak[j] * z + E[:, j]
            if spec.binarize[j] == "below_mean":
                Y[:, j] = (Y[:, j] < Y[:, j].mean()).astype(float)
            elif spec.binarize[j] == "above_mean":
                Y[:, j] = (Y[:, j] > Y[:, j].mean()).astype(float)
    data = ExperimentData(z[:, None], Y, X, treatment_names=["z1"], covariate_names=cov_names)
    return (data, eta) if return_latent else data


def _irt_indices(irt: Mapping, eta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    k = int(irt["items"])
    g = int(irt.get("indices", 2))
    lo, hi = irt.get("a", [0.5, 1.5])
    a = rng.uniform(lo, hi, k)
    b = rng.normal(0.0, float(irt.get("b_sd", np.sqrt(2.0))), k)
    c = float(irt.get("c", 0.2))
    P = c + (1 - c) / (1 + np.exp(-a * (eta[:, None] - b)))
    items = (rng.random(P.shape) < P).astype(float)
    return np.column_stack([blk.sum(axis=1) for blk in np.split(items, g, axis=1)])


# ---------------------------------------------------------------------------
# estimator registry


def _est_wsi(data, spec):
    return gmm_joint(data, spec.reference)


def _est_wsi_neyman(data, spec):
    return estimate_wsi(data, spec.reference, variance="neyman")


def _est_wsi_equal(data, spec):
    return estimate_wsi(data, spec.reference, weights="equal", variance="neyman")


def _est_wsi_treatment_iv(data, spec):
    return estimate_wsi(data, spec.reference, instruments=("treatment",), variance="neyman")


def _est_wsi_known(data, spec):
    lam = np.asarray(spec.lambda_)
    sc = ScalingEstimate.known(lam / lam[spec.reference], spec.reference, data.outcome_names)
    if data.J == 1:
        scheme = make_weights("equal", J=1)
    else:
        scheme = make_weights("inverse_variance", sc, estimate_error_variances(data, sc))
    return dim_wsi(build_wsi(data, sc, scheme), data)


def _est_sem(data, spec):
    names = data.outcome_names
    model = latent_model(list(data.treatment_names), list(names), reference=names[spec.reference])
    res = sem_fit(model, data)
    key = f"beta[{data.treatment_names[0]}]"
    return res.theta[key], res.se[key]


def _est_reference_only(data, spec):
    sc = ScalingEstimate.known(np.ones(data.J), spec.reference, data.outcome_names)
    w = np.zeros(data.J)
    w[spec.reference] = 1.0
    return dim_wsi(build_wsi(data, sc, make_weights("user", weights=w)), data)


def _est_bridge(data, spec):
    bridged = [j for j, b in enumerate(spec.binarize) if b is not None]
    return alte_with_bridges(data, bridged, reference=spec.reference, draws=0)


def _suspect(spec):
    return [j for j, t in enumerate(spec.transforms) if t != "identity"]


def _est_wsi_robust(data, spec):
    roster = {data.outcome_names[j]: ("treatment",) for j in _suspect(spec)}
    roster["default"] = ("treatment", "measures")
    return estimate_wsi(data, spec.reference, instruments=roster, variance="neyman")


def _est_wsi_naive(data, spec):
    others = [j for j in range(data.J) if j != spec.reference]
    roster = {}
    for j in _suspect(spec):
        cross = [data.outcome_names[k] for k in others if k != j and k not in _suspect(spec)]
        roster[data.outcome_names[j]] = tuple(cross) or ("measures",)
    roster["default"] = ("treatment", "measures")
    return estimate_wsi(data, spec.reference, instruments=roster, variance="neyman")


def _baseline(fn):
    def run(data, spec):
        return fn(data).index
    return run


ESTIMATORS: dict[str, Callable] = {
    "wsi": _est_wsi,
    "wsi_neyman": _est_wsi_neyman,
    "wsi_equal": _est_wsi_equal,
    "wsi_treatment_iv": _est_wsi_treatment_iv,
    "wsi_known": _est_wsi_known,
    "wsi_robust": _est_wsi_robust,
    "wsi_naive": _est_wsi_naive,
    "sem": _est_sem,
    "reference_only": _est_reference_only,
    "bridge": _est_bridge,
    "equal_std": _baseline(equal_std_index),
    "icw": _baseline(icw_index),
    "pca": _baseline(pca_index),
}


def _unpack(out) -> tuple[float, float]:
    if isinstance(out, tuple):
        return float(out[0]), float(out[1])
    return float(out.tau_hat), float(out.se)


# ---------------------------------------------------------------------------
# Monte Carlo engine


@dataclass(eq=False)
class McReport:
    """Aggregated Monte Carlo results.

    ``table`` has one row per estimator with columns ``mean``, ``sd``,
    ``mean_se``, ``bias``, ``rmse``, ``rejection`` (two-sided test of a zero
    effect at ``alpha``), ``coverage`` (normal 95% interval), ``failures``
    and ``n_ok``. ``estimates`` and ``ses`` hold per-replicate values with
    NaN for failures.
    """

    spec: DgpSpec
    truth: float
    replicates: int
    seed: int
    alpha: float
    table: pd.DataFrame
    estimates: dict
    ses: dict
    runtime: float = 0.0

    def row(self, estimator: str) -> pd.Series:
        return self.table.loc[estimator]

    def to_dict(self, include_runtime: bool = False) -> dict:
        d = {
            "spec": self.spec.to_dict(),
            "truth": float(self.truth),
            "replicates": int(self.replicates),
            "seed": int(self.seed),
            "alpha": float(self.alpha),
            "results": [
                {"estimator": k, **{c: _py(v) for c, v in row.items()}} for k, row in self.table.iterrows()
            ],
        }
        if include_runtime:
            d["runtime"] = float(self.runtime)
        return d

    def to_json(self, include_runtime: bool = False) -> str:
        return json.dumps(self.to_dict(include_runtime), indent=2)


def _py(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v) if np.isfinite(v) else None
    return v


def _summarize(est: dict, ses: dict, truth: float, alpha: float) -> pd.DataFrame:
    crit = float(stats.norm.ppf(1 - alpha / 2))
    rows = {}
    for name in est:
        e = np.asarray(est[name], dtype=float)
        s = np.asarray(ses[name], dtype=float)
        ok = np.isfinite(e) & np.isfinite(s)
        eo, so = e[ok], s[ok]
        m = int(ok.sum())
        if m == 0:
            rows[name] = dict(mean=np.nan, sd=np.nan, mean_se=np.nan, bias=np.nan, rmse=np.nan,
                              rejection=np.nan, coverage=np.nan, failures=int(e.size), n_ok=0)
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(so > 0, np.abs(eo) / so, np.where(eo != 0, np.inf, 0.0))
        rows[name] = dict(
            mean=float(eo.mean()),
            sd=float(eo.std(ddof=1)) if m > 1 else np.nan,
            mean_se=float(so.mean()),
            bias=float(eo.mean() - truth),
            rmse=float(np.sqrt(np.mean((eo - truth) ** 2))),
            rejection=float(np.mean(t > crit)),
            coverage=float(np.mean(np.abs(eo - truth) <= crit * so)),
            failures=int(e.size - m),
            n_ok=m,
        )
    table = pd.DataFrame.from_dict(rows, orient="index")
    table.index.name = "estimator"
    return table


def _replicate(spec: DgpSpec, names: Sequence[str], seed: int, r: int):
    data = generate(spec, [seed, r])
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for name in names:
            try:
                out[name] = _unpack(ESTIMATORS[name](data, spec))
            except (AlteError, np.linalg.LinAlgError, ZeroDivisionError, FloatingPointError, ValueError):
                out[name] = (np.nan, np.nan)
    return out


def run_mc(
    spec: DgpSpec,
    estimators: Sequence[str] = ("wsi",),
    replicates: int = 1000,
    seed: int = 42,
    alpha: float = 0.05,
    n_jobs: int = 1,
) -> McReport:
    """Run every estimator on the same simulated datasets.

    Failed fits are counted per estimator and excluded from the aggregates.
    """
    names = list(estimators)
    if not names:
        raise ValidationError("the estimator roster is empty")
    unknown = [nm for nm in names if nm not in ESTIMATORS]
    if unknown:
        raise ValidationError(f"unknown estimators {unknown}; available: {sorted(ESTIMATORS)}")
    if replicates < 1:
        raise ValidationError("replicates must be positive")
    t0 = time.perf_counter()
    if n_jobs == 1:
        reps = [_replicate(spec, names, seed, r) for r in range(replicates)]
    else:
        from joblib import Parallel, delayed

        reps = Parallel(n_jobs=n_jobs)(delayed(_replicate)(spec, names, seed, r) for r in range(replicates))
    est = {nm: np.array([rep[nm][0] for rep in reps]) for nm in names}
    ses = {nm: np.array([rep[nm][1] for rep in reps]) for nm in names}
    table = _summarize(est, ses, spec.alte, alpha)
    return McReport(spec, spec.alte, replicates, seed, alpha, table, est, ses, time.perf_counter() - t0)


def run_grid(
    spec: DgpSpec,
    path: str,
    values: Sequence[float],
    estimators: Sequence[str] = ("wsi",),
    replicates: int = 1000,
    seed: int = 42,
    alpha: float = 0.05,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """Run :func:`run_mc` over values of one spec field (dotted path).

    Returns a tidy frame with one row per grid value and estimator.
    """
    frames = []
    for v in values:
        rep = run_mc(spec.with_path(path, v), estimators, replicates, seed, alpha, n_jobs)
        t = rep.table.reset_index()
        t.insert(0, "truth", rep.truth)
        t.insert(0, path, v)
        frames.append(t)
    return pd.concat(frames, ignore_index=True)


# ---------------------------------------------------------------------------
# built-in specs


def list_builtin_specs() -> list[str]:
    files = resources.files("alte").joinpath("specs")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def builtin_spec(name: str) -> dict:
    """Raw JSON dictionary of a bundled spec."""
    path = resources.files("alte").joinpath("specs").joinpath(f"{name}.json")
    if not path.is_file():
        raise ValidationError(f"no built-in spec {name!r}; available: {list_builtin_specs()}")
    return json.loads(path.read_text())


def load_spec(source) -> tuple[DgpSpec, dict]:
    """Load a spec from a path, a built-in name or a dict.

    Returns the :class:`DgpSpec` and the run options (``grid``,
    ``estimators``, ``replicates``, ``seed``, ``alpha``) found in the file.
    """
    if isinstance(source, Mapping):
        raw = dict(source)
    else:
        import os

        s = str(source)
        if os.path.exists(s):
            with open(s) as fh:
                try:
                    raw = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ValidationError(f"spec file {s!r} is not valid JSON: {exc}") from exc
        else:
            stem = os.path.basename(s)
            stem = stem[:-5] if stem.endswith(".json") else stem
            raw = builtin_spec(stem)
    opts = {k: raw[k] for k in ("grid", "estimators", "replicates", "seed", "alpha") if k in raw}
    return DgpSpec.from_dict(raw), opts


# ---------------------------------------------------------------------------
# studies


def _mc_loop(make, evaluators: Mapping[str, Callable], replicates: int, seed: int):
    est = {k: np.full(replicates, np.nan) for k in evaluators}
    ses = {k: np.full(replicates, np.nan) for k in evaluators}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for r in range(replicates):
            data = make([seed, r])
            for k, fn in evaluators.items():
                try:
                    est[k][r], ses[k][r] = _unpack(fn(data))
                except (AlteError, np.linalg.LinAlgError, ZeroDivisionError, FloatingPointError, ValueError):
                    pass
    return est, ses


def study_exclusion_violation(
    base: DgpSpec | None = None,
    leak: float = 0.05,
    valid_grid: Sequence[int] = (2, 3, 4, 5, 6),
    replicates: int = 1000,
    seed: int = 42,
    leak_on_reference: bool = False,
    estimator: str = "wsi_neyman",
) -> pd.DataFrame:
    """Bias of the index when one measure has a direct treatment effect.

    Each replicate draws ``max(valid_grid)`` valid measures plus one invalid
    measure; every grid point uses a subset of the same draws. The invalid
    measure is last, or the reference when ``leak_on_reference``.
    """
    vmax = max(valid_grid)
    J = vmax + 1
    if base is None:
        base = builtin_spec_obj("exclusion")
    spec = base.replace(
        lambda_=[1.0] * J, errors=[base.errors[0]] * J,
        leak=[0.0] * vmax + [leak], intercepts=[0.0] * J,
        transforms=["identity"] * J, binarize=[None] * J, reference=0,
    )
    inv = J - 1
    evaluators = {}
    for v in valid_grid:
        cols = list(range(v)) + [inv]
        ref = len(cols) - 1 if leak_on_reference else 0
        sub_spec = DgpSpec(lambda_=[1.0] * len(cols), errors=[1.0] * len(cols), reference=ref, n=spec.n)

        def fn(d, cols=cols, sub_spec=sub_spec):
            return ESTIMATORS[estimator](d.select_outcomes(cols), sub_spec)

        evaluators[v] = fn
    est, ses = _mc_loop(lambda s: generate(spec, s), evaluators, replicates, seed)
    table = _summarize(est, ses, spec.alte, 0.05).reset_index().rename(columns={"estimator": "valid_measures"})
    table.insert(1, "leak", leak)
    table.insert(2, "leak_on_reference", leak_on_reference)
    return table


def study_nonlinearity(
    transform: str = "quadratic",
    base: DgpSpec | None = None,
    replicates: int = 1000,
    seed: int = 42,
) -> pd.DataFrame:
    """Naive versus robust index when measure 2 is a nonlinear function of the latent outcome."""
    if base is None:
        base = builtin_spec_obj("nonlinearity")
    tr = list(base.transforms)
    tr[1] = transform
    spec = base.replace(transforms=tr)
    evaluators = {nm: (lambda d, nm=nm: ESTIMATORS[nm](d, spec)) for nm in ("wsi_naive", "wsi_robust")}
    est, ses = _mc_loop(lambda s: generate(spec, s), evaluators, replicates, seed)
    table = _summarize(est, ses, spec.alte, 0.05).reset_index()
    table.insert(0, "transform", transform)
    return table


def study_variance_reduction(
    J_grid: Sequence[int] = (1, 2, 3, 4, 5, 6),
    reliability: Mapping[str, float] | None = None,
    base: DgpSpec | None = None,
    replicates: int = 1000,
    seed: int = 42,
) -> pd.DataFrame:
    """Variance of the optimally weighted index as measures are added.

    ``reliability`` maps a regime label to the error sd. Every replicate
    draws ``max(J_grid)`` measures once and each ``J`` uses the first ``J``
    (common random numbers). Scaling is known; weights use estimated error
    variances.

    Columns: ``var`` is the average over replicates of the estimated
    (Neyman) variance, ``empirical_var`` the variance of the estimates
    across replicates, ``theory_var`` the closed-form forecast, ``delta``
    the change in ``var`` from ``J`` to the next grid value and ``ratio``
    the next ``delta`` over this one, next to ``theory_ratio = J/(J+2)``.
    """
    if base is None:
        base = builtin_spec_obj("table_a3")
    reliability = dict(reliability or {"High": 2.0, "Low": 5.0})
    J_grid = sorted(J_grid)
    Jmax = max(J_grid)
    rows = []
    for k, (label, sd) in enumerate(reliability.items()):
        spec = base.replace(lambda_=[1.0] * Jmax, errors=[sd] * Jmax, intercepts=[0.0] * Jmax,
                            leak=[0.0] * Jmax, transforms=["identity"] * Jmax, binarize=[None] * Jmax)
        evaluators = {}
        for J in J_grid:
            sub = DgpSpec(lambda_=[1.0] * J, errors=[sd] * J, n=spec.n)
            evaluators[J] = (lambda d, J=J, sub=sub: _est_wsi_known(d.select_outcomes(list(range(J))), sub))
        est, ses = _mc_loop(lambda s: generate(spec, s), evaluators, replicates, seed + k)
        var = {J: float(np.nanmean(ses[J] ** 2)) for J in J_grid}
        emp = {J: float(np.nanvar(est[J], ddof=1)) for J in J_grid}
        n1 = int(round(spec.n * spec.treated_share))
        for i, J in enumerate(J_grid):
            nxt = J_grid[i + 1] if i + 1 < len(J_grid) else None
            nxt2 = J_grid[i + 2] if i + 2 < len(J_grid) else None
            delta = var[nxt] - var[J] if nxt is not None else np.nan
            delta2 = var[nxt2] - var[nxt] if nxt2 is not None else np.nan
            theory_var = forecast_variance(n1, spec.n - n1, np.ones(J), np.full(J, sd**2), (spec.s1**2, spec.s0**2))
            rows.append({
                "J": J, "reliability": label, "error_sd": sd, "var": var[J], "empirical_var": emp[J],
                "theory_var": theory_var, "delta": delta,
                "ratio": delta2 / delta if np.isfinite(delta2) and delta != 0 else np.nan,
                "theory_ratio": J / (J + 2) if np.isfinite(delta2) else np.nan,
            })
    return pd.DataFrame(rows)


def study_bridge(
    base: DgpSpec | None = None,
    replicates: int = 1000,
    seed: int = 42,
) -> McReport:
    """Bridged versus linear index on binary measures."""
    if base is None:
        base = builtin_spec_obj("bridge_binary")
    return run_mc(base, ("bridge", "wsi_neyman"), replicates, seed)


def study_linearization(
    item_grid: Sequence[int] = (5, 10, 15, 20),
    base: DgpSpec | None = None,
    replicates: int = 500,
    seed: int = 42,
    alpha: float = 0.05,
) -> pd.DataFrame:
    """RESET rejection rate of an additive IRT index on the latent outcome.

    ``item_grid`` gives the number of binary items summed into each index.
    """
    from .diagnose import reset_from_arrays

    if base is None:
        base = builtin_spec_obj("irt_linearization")
    rows = []
    for k, items in enumerate(item_grid):
        irt = dict(base.irt)
        irt["items"] = 2 * items
        spec = base.replace(irt=irt)
        rej, fails = [], 0
        for r in range(replicates):
            data, eta = generate(spec, [seed + k, r], return_latent=True)
            try:
                rej.append(reset_from_arrays(data.outcomes[:, 0], eta).pvalue < alpha)
            except AlteError:
                fails += 1
        rows.append({"items_per_index": items, "rejection": float(np.mean(rej)) if rej else np.nan,
                     "replicates": replicates, "failures": fails})
    return pd.DataFrame(rows)


def builtin_spec_obj(name: str) -> DgpSpec:
    return DgpSpec.from_dict(builtin_spec(name))
