import json

import numpy as np
import pytest
import statsmodels.api as sm
from scipy import stats
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from alte.dataset import ExperimentData
from alte.estimate import (
    AlteResult,
    LatentEffectEstimator,
    bootstrap,
    dim_wsi,
    estimate_wsi,
    gmm_joint,
    ols_adjusted,
    stacked_regression,
    stars,
)
from alte.exceptions import ValidationError
from alte.identify import lambda_combined
from alte.index import WeightScheme, build_wsi, estimate_error_variances, make_weights

from conftest import make_data


def _neyman(v, z):
    a, b = v[z == 1], v[z == 0]
    return a.mean() - b.mean(), np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)


def test_dim_neyman_oracle(data):
    w = build_wsi(data, [1.0, 0.8, 1.5], make_weights("equal", J=3))
    r = dim_wsi(w, data)
    tau, se = _neyman(w.values, data.treatments[:, 0])
    assert r.tau_hat == pytest.approx(tau, abs=1e-12)
    assert r.se == pytest.approx(se, rel=1e-12)
    assert r.variance_method == "neyman_known_lambda"
    assert r.n_treated + r.n_control == data.n


def test_ols_adjusted_matches_statsmodels_hc2(data_cov):
    w = build_wsi(data_cov, [1.0, 0.8, 1.5], make_weights("equal", J=3))
    r = ols_adjusted(data_cov, w, covariates=True)["z1"]
    X = sm.add_constant(np.column_stack([data_cov.treatments, data_cov.covariates]))
    ref = sm.OLS(w.values, X).fit(cov_type="HC2")
    assert r.tau_hat == pytest.approx(ref.params[1], abs=1e-12)
    assert r.se == pytest.approx(ref.bse[1], rel=1e-10)


def test_stacked_cluster_se_matches_statsmodels(data):
    sc = [1.0, 0.8, 1.5]
    scheme = make_weights("equal", J=3)
    r = stacked_regression(data, sc, scheme)
    J = data.J
    y = (data.outcomes * (J * scheme.weights / np.array(sc))).ravel()
    X = sm.add_constant(np.repeat(data.treatments[:, 0], J))
    groups = np.repeat(np.arange(data.n), J)
    ref = sm.OLS(y, X).fit(cov_type="cluster", cov_kwds={"groups": groups, "use_correction": False,
                                                          "df_correction": False})
    assert r.tau_hat == pytest.approx(ref.params[1], abs=1e-12)
    assert r.se == pytest.approx(ref.bse[1], rel=1e-10)


@given(
    st.integers(0, 10_000),
    st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3),
    st.lists(st.floats(0.3, 3.0), min_size=3, max_size=3),
)
def test_stacking_identity(seed, raw_w, lam):
    d = make_data(n=120, seed=seed)
    w = np.asarray(raw_w) / np.sum(raw_w)
    scheme = WeightScheme("user", w)
    a = stacked_regression(d, lam, scheme).tau_hat
    b = dim_wsi(build_wsi(d, lam, scheme), d).tau_hat
    assert abs(a - b) <= 1e-10 * max(1.0, abs(b))


def test_gmm_point_equals_pipeline(data):
    r = gmm_joint(data, 0)
    sc = lambda_combined(data, 0)
    ev = estimate_error_variances(data, sc)
    dim = dim_wsi(build_wsi(data, sc, make_weights("inverse_variance", sc, ev)), data)
    assert r.tau_hat == pytest.approx(dim.tau_hat, abs=1e-8)
    assert r.diagnostics["pipeline_tau"] == pytest.approx(dim.tau_hat, abs=1e-12)
    assert r.variance_method == "gmm_sandwich"
    assert r.se > 0


def test_gmm_se_close_to_bootstrap():
    d = make_data(n=1500, seed=11)
    g = estimate_wsi(d, 0)
    b = estimate_wsi(d, 0, variance="bootstrap", draws=300, seed=1)
    assert b.tau_hat == pytest.approx(g.tau_hat, abs=1e-8)
    assert g.se == pytest.approx(b.se, rel=0.15)


def test_gmm_known_scaling_matches_neyman_point(data):
    lam = [1.0, 0.8, 1.5]
    g = gmm_joint(data, 0, scaling=lam)
    n = estimate_wsi(data, 0, scaling=lam, variance="neyman")
    assert g.tau_hat == pytest.approx(n.tau_hat, abs=1e-8)


@given(st.integers(0, 1000), st.floats(0.1, 10.0))
def test_t_ratio_invariant_to_reference_rescaling(seed, c):
    d = make_data(n=200, seed=seed, tau=0.8)
    d2 = d.with_outcomes(d.outcomes * np.array([c, 1.0, 1.0]))
    for variance in ("gmm", "neyman", "hc2"):
        r1, r2 = estimate_wsi(d, 0, variance=variance), estimate_wsi(d2, 0, variance=variance)
        assert r2.tau_hat == pytest.approx(c * r1.tau_hat, rel=1e-6)
        assert r2.tstat == pytest.approx(r1.tstat, abs=1e-6)


def test_bootstrap_reproducible(data):
    fn = lambda d: estimate_wsi(d, 0, variance="neyman")  # noqa: E731
    a = bootstrap(fn, data, draws=40, seed=3)
    b = bootstrap(fn, data, draws=40, seed=3)
    c = bootstrap(fn, data, draws=40, seed=3, n_jobs=2)
    assert a.se == b.se == c.se
    assert a.ci95 == b.ci95
    assert a.diagnostics["failures"] == 0
    assert bootstrap(fn, data, draws=40, seed=4).se != a.se


def test_bootstrap_of_mean_matches_theory():
    rng = np.random.default_rng(0)
    d = ExperimentData(np.tile([0, 1], 500), rng.standard_normal((1000, 1)))
    r = bootstrap(lambda x: float(x.outcomes.mean()), d, draws=500, seed=0)
    assert r.se == pytest.approx(1 / np.sqrt(1000), rel=0.1)
    assert r.estimator == "custom"


def test_multi_arm_dim_flags():
    rng = np.random.default_rng(2)
    cell = np.repeat([0, 1, 2], 100)
    Z = np.column_stack([cell == 1, cell == 2]).astype(float)
    Y = rng.standard_normal((300, 2)) + Z[:, :1]
    d = ExperimentData(Z, Y)
    r = dim_wsi(Y[:, 0], d, arm="z2")
    assert r.n_control == 100 and r.n_treated == 100
    assert any("multi_arm" in f for f in r.flags)
    res = ols_adjusted(d, Y[:, 0])
    assert set(res) == {"z1", "z2"}


def test_estimate_wsi_rejects_unknown_variance(data):
    with pytest.raises(ValidationError):
        estimate_wsi(data, 0, variance="jackknife")


def test_result_serialization(data):
    r = estimate_wsi(data, 0)
    d = r.to_dict()
    json.dumps(d)
    assert d["tau_hat"] == r.tau_hat and d["se"] == r.se
    assert r.pvalue == pytest.approx(2 * stats.norm.sf(abs(r.tstat)))


def test_stars():
    assert stars(0.0001) == "***"
    assert stars(0.02) == "**"
    assert stars(0.07) == "*"
    assert stars(0.5) == ""


def test_estimator_api(data):
    est = LatentEffectEstimator(variance="neyman")
    c = clone(est)
    c.fit(data.outcomes, data.treatments)
    assert c.effect_ == pytest.approx(estimate_wsi(data, 0, variance="neyman").tau_hat)
    np.testing.assert_allclose(c.predict([0, 1]), [0.0, c.effect_])
    assert isinstance(c.result_, AlteResult)
