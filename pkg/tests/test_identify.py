import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from statsmodels.sandbox.regression.gmm import IV2SLS

from alte.dataset import ExperimentData
from alte.exceptions import IndexCollisionError, WeakInstrumentError
from alte.identify import ScalingEstimate, lambda_combined, lambda_measure_iv, lambda_treatment_iv

from conftest import make_data


def _iv2sls(y, endog, instr):
    n = y.size
    X = np.column_stack([np.ones(n), endog])
    H = np.column_stack([np.ones(n), instr])
    return IV2SLS(y, X, H).fit().params


def test_treatment_iv_is_covariance_ratio(data):
    z, Y = data.treatments[:, 0], data.outcomes
    expected = np.cov(z, Y[:, 2])[0, 1] / np.cov(z, Y[:, 0])[0, 1]
    assert lambda_treatment_iv(data, 2) == pytest.approx(expected, abs=1e-12)


def test_treatment_iv_matches_2sls(data):
    Y = data.outcomes
    params = _iv2sls(Y[:, 1], Y[:, 0], data.treatments)
    assert lambda_treatment_iv(data, 1) == pytest.approx(params[1], abs=1e-10)


def test_treatment_iv_with_covariates_matches_2sls(data_cov):
    Y = data_cov.outcomes
    params = _iv2sls(Y[:, 2], Y[:, 0], np.column_stack([data_cov.treatments, data_cov.covariates]))
    assert lambda_treatment_iv(data_cov, 2, covariates=True) == pytest.approx(params[1], abs=1e-10)


def test_reference_is_one(data):
    assert lambda_treatment_iv(data, 0) == 1.0


def test_measure_iv(data):
    Y = data.outcomes
    params = _iv2sls(Y[:, 1], Y[:, 0], Y[:, 2])
    assert lambda_measure_iv(data, 1, 2) == pytest.approx(params[1], abs=1e-10)
    with pytest.raises(IndexCollisionError):
        lambda_measure_iv(data, 1, 1)
    with pytest.raises(IndexCollisionError):
        lambda_measure_iv(data, 1, 0)


def test_weak_instrument():
    rng = np.random.default_rng(1)
    n = 200
    z = np.tile([0.0, 1.0], n // 2)
    y0 = rng.standard_normal(n)
    y0 = y0 - np.array([y0[z == g].mean() for g in z])  # no treatment contrast in the reference
    Y = np.column_stack([y0, rng.standard_normal(n)])
    d = ExperimentData(z, Y)
    with pytest.raises(WeakInstrumentError):
        lambda_treatment_iv(d, 1)


def test_combined_2sls_matches_equationwise(data):
    est = lambda_combined(data, 0, instruments=("treatment", "measures"), weighting="2sls")
    Y, z = data.outcomes, data.treatments[:, 0]
    for j, k in ((1, 2), (2, 1)):
        params = _iv2sls(Y[:, j], Y[:, 0], np.column_stack([z, Y[:, k]]))
        assert est.lambda_[j] == pytest.approx(params[1], abs=1e-9)
        assert est.intercepts[j] == pytest.approx(params[0], abs=1e-9)
    assert est.lambda_[0] == 1.0


def _two_step_oracle(y, x, H):
    """Two-step GMM for y = a + b x with instruments H, identity first step."""
    n = y.size
    X = np.column_stack([np.ones(n), x])
    A = H.T @ X / n
    c = H.T @ y / n

    def solve(W):
        return np.linalg.solve(A.T @ W @ A, A.T @ W @ c)

    th = solve(np.eye(H.shape[1]))
    g = H * (y - X @ th)[:, None]
    S = np.cov(g.T, bias=True)
    W = np.linalg.inv(S)
    th = solve(W)
    g = H * (y - X @ th)[:, None]
    gbar = g.mean(axis=0)
    S2 = np.cov(g.T, bias=True)
    J = n * gbar @ np.linalg.solve(S2, gbar)
    return th, J


def test_two_step_and_j_statistic_against_oracle(data_cov):
    d = data_cov.select_outcomes([0, 1])
    est = lambda_combined(d, 0, instruments=("treatment", "covariates"))
    H = np.column_stack([np.ones(d.n), d.treatments, d.covariates])
    th, J = _two_step_oracle(d.outcomes[:, 1], d.outcomes[:, 0], H)
    assert est.lambda_[1] == pytest.approx(th[1], rel=1e-8)
    assert est.j_df == 1
    assert est.j_stat == pytest.approx(J, rel=1e-6)
    assert est.j_pvalue == pytest.approx(stats.chi2.sf(J, 1), rel=1e-6)


def test_exactly_identified_has_no_j(data):
    est = lambda_combined(data, 0, instruments=("treatment",))
    assert est.j_df == 0 and est.j_pvalue == 1.0
    for j in (1, 2):
        assert est.lambda_[j] == pytest.approx(lambda_treatment_iv(data, j), abs=1e-10)


def test_per_instrument_ratios(data):
    est = lambda_combined(data, 0)
    assert est.per_instrument[("y2", "z1")] == pytest.approx(lambda_treatment_iv(data, 1), abs=1e-10)
    assert est.per_instrument[("y2", "y3")] == pytest.approx(lambda_measure_iv(data, 1, 2), abs=1e-10)


def test_known_scaling():
    est = ScalingEstimate.known([1.0, 2.0], 0, ["a", "b"])
    assert est.lambda_.tolist() == [1.0, 2.0]
    assert est.to_dict()["weighting"] == "known"


@given(st.integers(0, 5000), st.floats(0.2, 5.0), st.floats(-3.0, 3.0))
def test_affine_equivariance(seed, scale, shift):
    """Rescaling a measure rescales its loading; shifting it leaves the loading unchanged."""
    d = make_data(n=200, seed=seed, tau=1.0)
    base = lambda_treatment_iv(d, 2)
    d2 = d.with_outcomes(d.outcomes * np.array([1, 1, scale]) + np.array([0, 0, shift]))
    assert lambda_treatment_iv(d2, 2) == pytest.approx(scale * base, rel=1e-9, abs=1e-12)
    d3 = d.with_outcomes(d.outcomes * np.array([scale, 1, 1]))
    assert lambda_treatment_iv(d3, 2) == pytest.approx(base / scale, rel=1e-9, abs=1e-12)
