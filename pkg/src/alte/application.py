"""Two-arm, two-measure application workflow with a bundled synthetic dataset.

The workflow fits the index, structural and SUR models with and without a
baseline covariate, tests the latent model against SUR and tests
measurement equivalence across treatment cells. The bundled dataset is
simulated so that its regression on the arms reproduces a published
summary covariance matrix of a canvassing experiment; it stands in when
the original unit-level file is not available.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import pandas as pd
from scipy.stats import norm

from .baselines import sur_fit
from .dataset import ExperimentData, ingest_csv
from .estimate import estimate_wsi, stars
from .exceptions import ValidationError
from .structural import compare_nested, fit, fit_multigroup, latent_model, sur_model

__all__ = [
    "GENERATING_PARAMETERS",
    "SUMMARY_MOMENTS",
    "ApplicationReport",
    "simulate_application",
    "build_synthetic_bundle",
    "load_synthetic_application",
    "analyze_application",
]

GENERATING_PARAMETERS = {
    "n_per_arm": 526,
    "treatments": ["full", "mod"],
    "measures": ["att", "pol"],
    "covariate": "cov",
    "covariate_mean": 1.76,
    "covariate_variance": 19.318,
    "beta": {"full": 0.4291, "mod": 0.0909, "cov": 0.6617},
    "lambda": {"att": 1.0, "pol": 1.549},
    "intercept": {"att": 0.721, "pol": 0.556},
    "psi": 1.3242,
    "sigma2": {"att": 2.5231, "pol": 6.6976},
}


# Means and covariance of (full, mod, att, pol, cov), n = 1578.
SUMMARY_MOMENTS = {
    "columns": ["full", "mod", "att", "pol", "cov"],
    "n": 1578,
    "mean": [0.33, 0.33, 2.06, 2.63, 1.76],
    "cov": [
        [0.226, -0.109, 0.061, 0.104, -0.035],
        [-0.109, 0.216, 0.008, 0.010, 0.052],
        [0.061, 0.008, 12.328, 15.187, 12.775],
        [0.104, 0.010, 15.187, 30.222, 19.782],
        [-0.035, 0.052, 12.775, 19.782, 19.318],
    ],
}


def _exact_moments(Z: np.ndarray, noise: np.ndarray, moments: dict) -> np.ndarray:
    """Columns whose regression on ``[1, Z]`` matches the summary moments exactly.

    The summary gives coefficients ``B = S_zz^-1 S_zw``, intercepts and the
    residual covariance. ``noise`` is projected off ``[1, Z]`` and rotated to
    that residual covariance (``ddof=1``).
    """
    S = np.asarray(moments["cov"], dtype=float)
    mu = np.asarray(moments["mean"], dtype=float)
    t = Z.shape[1]
    Szz, Szw, Sww = S[:t, :t], S[:t, t:], S[t:, t:]
    B = np.linalg.solve(Szz, Szw)
    a = mu[t:] - mu[:t] @ B
    resid_cov = Sww - Szw.T @ B
    X = np.column_stack([np.ones(Z.shape[0]), Z])
    R = noise - X @ np.linalg.lstsq(X, noise, rcond=None)[0]
    C = R.T @ R / (Z.shape[0] - 1)
    R = R @ np.linalg.inv(np.linalg.cholesky(C)).T @ np.linalg.cholesky(resid_cov).T
    return a + Z @ B + R


def simulate_application(seed: int = 42, params: dict | None = None, exact: bool = False) -> ExperimentData:
    """Draw a three-cell experiment.

    Units are split equally between control and the two arms by complete
    randomization. By default outcomes follow the latent model
    ``eta = beta_full Z1 + beta_mod Z2 + beta_cov X + zeta`` with each
    measure equal to ``intercept + lambda * eta + error``. With ``exact``
    the normal draws are instead transformed so that the regression of
    ``(att, pol, cov)`` on the arms reproduces :data:`SUMMARY_MOMENTS`
    exactly.
    """
    p = dict(GENERATING_PARAMETERS if params is None else params)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    m = int(p["n_per_arm"])
    n = 3 * m
    cell = np.repeat([0, 1, 2], m)[rng.permutation(n)]
    Z = np.column_stack([cell == 1, cell == 2]).astype(float)
    if exact:
        W = _exact_moments(Z, rng.standard_normal((n, 3)), SUMMARY_MOMENTS)
        return ExperimentData(Z, W[:, :2], W[:, 2:], p["treatments"], p["measures"], [p["covariate"]])
    x = p["covariate_mean"] + np.sqrt(p["covariate_variance"]) * rng.standard_normal(n)
    b = p["beta"]
    eta = b["full"] * Z[:, 0] + b["mod"] * Z[:, 1] + b["cov"] * x + np.sqrt(p["psi"]) * rng.standard_normal(n)
    Y = np.column_stack([
        p["intercept"][y] + p["lambda"][y] * eta + np.sqrt(p["sigma2"][y]) * rng.standard_normal(n)
        for y in p["measures"]
    ])
    return ExperimentData(Z, Y, x[:, None], p["treatments"], p["measures"], [p["covariate"]])


def _summary_fits() -> dict:
    from .dataset import MomentSummary

    mom = MomentSummary(
        tuple(SUMMARY_MOMENTS["columns"]), SUMMARY_MOMENTS["n"],
        np.asarray(SUMMARY_MOMENTS["mean"]), np.asarray(SUMMARY_MOMENTS["cov"]),
    )
    out = {}
    for spec, exog in (("unadjusted", ["full", "mod"]), ("adjusted", ["full", "mod", "cov"])):
        r = fit(latent_model(exog, ["att", "pol"]), mom)
        out[spec] = {k: round(float(v), 6) for k, v in r.theta.items() if not k.startswith("phi")}
    return out


def build_synthetic_bundle(seed: int = 42) -> tuple[pd.DataFrame, dict]:
    """Frame and parameter record of the bundled synthetic dataset.

    The parameters are the structural fits to :data:`SUMMARY_MOMENTS`,
    which the dataset reproduces up to the arm shares.
    """
    data = simulate_application(seed, exact=True)
    frame = data.to_frame()[["full", "mod", "att", "pol", "cov"]].round(10)
    params = {
        "seed": seed,
        "construction": "exact regression moments of (att, pol, cov) on the arms",
        "schema": {"treatments": ["full", "mod"], "outcomes": ["att", "pol"], "covariates": ["cov"]},
        "summary_moments": SUMMARY_MOMENTS,
        "structural": _summary_fits(),
    }
    return frame, params


def load_synthetic_application() -> tuple[ExperimentData, dict]:
    """Bundled synthetic dataset and its generating parameters."""
    base = resources.files("alte").joinpath("data")
    params = json.loads(base.joinpath("application_synthetic.json").read_text())
    with resources.as_file(base.joinpath("application_synthetic.csv")) as path:
        data = ingest_csv(path, params["schema"])
    return data, params


@dataclass(eq=False)
class ApplicationReport:
    """Results of :func:`analyze_application`.

    ``wsi``, ``structural``, ``sur`` and ``nested`` are keyed by
    specification (``unadjusted`` or ``adjusted``).
    """

    wsi: dict
    structural: dict
    sur: dict
    nested: dict
    equivalence: dict | None
    reference: str
    measures: tuple
    treatments: tuple
    flags: list = field(default_factory=list)

    def table(self) -> pd.DataFrame:
        """Side-by-side coefficients of the index, structural and SUR fits."""
        rows = []
        other = [y for y in self.measures if y != self.reference]
        for spec in self.wsi:
            for arm in self.treatments:
                w = self.wsi[spec][arm]
                rows.append({"spec": spec, "method": "WSI", "term": arm, "estimate": w.tau_hat,
                             "se": w.se, "stars": w.stars})
                s = self.structural[spec]
                b, se = s.theta[f"beta[{arm}]"], s.se[f"beta[{arm}]"]
                rows.append({"spec": spec, "method": "structural", "term": arm, "estimate": b, "se": se,
                             "stars": stars(2 * norm.sf(abs(b / se))) if se > 0 else ""})
                for y in self.measures:
                    e = self.sur[spec].effects[f"{y}:{arm}"]
                    rows.append({"spec": spec, "method": f"SUR {y}", "term": arm, "estimate": e.tau_hat,
                                 "se": e.se, "stars": e.stars})
            for y in other:
                lam_w = self.wsi[spec][self.treatments[0]].diagnostics["lambda"]
                rows.append({"spec": spec, "method": "WSI", "term": f"lambda[{y}]",
                             "estimate": float(lam_w[list(self.measures).index(y)]), "se": np.nan, "stars": ""})
                s = self.structural[spec]
                rows.append({"spec": spec, "method": "structural", "term": f"lambda[{y}]",
                             "estimate": s.theta[f"lambda[{y}]"], "se": s.se[f"lambda[{y}]"], "stars": ""})
            s = self.structural[spec]
            rows.append({"spec": spec, "method": "structural", "term": "chi2 p-value", "estimate": s.pvalue,
                         "se": np.nan, "stars": ""})
            rows.append({"spec": spec, "method": "latent vs SUR", "term": "chi2 p-value",
                         "estimate": self.nested[spec].pvalue, "se": np.nan, "stars": ""})
        return pd.DataFrame(rows)

    def to_dict(self) -> dict:
        out = {
            "reference": self.reference,
            "measures": list(self.measures),
            "treatments": list(self.treatments),
            "wsi": {s: {a: r.to_dict() for a, r in d.items()} for s, d in self.wsi.items()},
            "structural": {s: r.to_dict() for s, r in self.structural.items()},
            "sur": {s: r.to_dict() for s, r in self.sur.items()},
            "nested": {s: r.to_dict() for s, r in self.nested.items()},
            "equivalence": self.equivalence,
            "flags": list(self.flags),
        }
        return out


def analyze_application(
    data: ExperimentData,
    reference: int | str = 0,
    kind: str = "GLS",
) -> ApplicationReport:
    """Fit every model of the application workflow.

    The index uses scaling parameters from two-stage least squares with the
    treatments (and, when adjusting, the covariates) as instruments,
    inverse-variance weights and a regression on all arms with HC2 errors.
    The structural and SUR fits use the same regressors. The equivalence
    test needs covariates and compares shared against cell-specific
    loadings and error variances.
    """
    ref = data.outcome_names[data.measure_index(reference)]
    if data.J < 2:
        raise ValidationError("the application workflow needs at least two measures")
    measures = [ref] + [y for y in data.outcome_names if y != ref]
    arms = list(data.treatment_names)
    covs = list(data.covariate_names)
    specs = {"unadjusted": []}
    if covs:
        specs["adjusted"] = covs
    wsi, structural, sur, nested = {}, {}, {}, {}
    flags = []
    for spec, cv in specs.items():
        d = data if cv else ExperimentData(data.treatments, data.outcomes, None,
                                           data.treatment_names, data.outcome_names)
        instruments = ("treatment", "covariates") if cv else ("treatment",)
        wsi[spec] = {
            a: estimate_wsi(d, ref, instruments=instruments, variance="hc2", arm=a, covariates=bool(cv))
            for a in arms
        }
        exog = arms + cv
        latent = latent_model(exog, measures, reference=ref)
        structural[spec] = fit(latent, d, kind)
        free = fit(sur_model(exog, measures), d, kind)
        nested[spec] = compare_nested(structural[spec], free)
        sur[spec] = sur_fit(d, covariates=bool(cv))
        flags += structural[spec].flags
    equivalence = None
    if covs:
        model = latent_model(arms + covs, measures, reference=ref)
        shared = fit_multigroup(model, data, "cell", True, True, kind)
        separate = fit_multigroup(model, data, "cell", False, False, kind)
        cmp = compare_nested(shared, separate)
        equivalence = cmp.to_dict()
    return ApplicationReport(wsi, structural, sur, nested, equivalence, ref, tuple(measures), tuple(arms), flags)
