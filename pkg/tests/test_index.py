import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from alte.exceptions import NotPositiveDefiniteError, ScalingError, ValidationError
from alte.identify import ScalingEstimate, lambda_combined
from alte.index import (
    WeightedScaledIndex,
    WeightScheme,
    build_wsi,
    estimate_error_variances,
    make_weights,
)

from conftest import make_data


def _within_cov(data):
    Y = data.outcomes
    z = data.treatments[:, 0]
    D = np.vstack([Y[z == g] - Y[z == g].mean(axis=0) for g in (0, 1)])
    return D.T @ D / (data.n - 2)


def test_error_variances_against_hand_computation(data):
    lam = np.array([1.0, 0.8, 1.5])
    ev = estimate_error_variances(data, lam)
    C = _within_cov(data)
    psi = np.mean([C[0, 1] / 0.8, C[0, 2] / 1.5, C[1, 2] / (0.8 * 1.5)])
    assert ev.psi == pytest.approx(psi, rel=1e-12)
    np.testing.assert_allclose(ev.sigma2, np.diag(C) - lam**2 * psi, rtol=1e-12)


def test_error_variances_consistent():
    d = make_data(n=40_000, lam=(1.0, 0.5, 2.0), sd=(1.0, 0.5, 1.5), seed=9)
    ev = estimate_error_variances(d, [1.0, 0.5, 2.0])
    np.testing.assert_allclose(ev.sigma2, [1.0, 0.25, 2.25], rtol=0.05)
    assert ev.psi == pytest.approx(1.0, rel=0.05)


def test_unpooled_components(data):
    ev = estimate_error_variances(data, [1.0, 0.8, 1.5], pooled=False)
    assert set(ev.by_cell) == {(0,), (1,)}
    assert not ev.pooled


def test_heywood_truncation():
    d = make_data(n=300, seed=4)
    with pytest.warns(UserWarning, match="Heywood"):
        ev = estimate_error_variances(d, [1.0, 0.8, 4.0])  # loading far too large for y3
    assert ev.heywood == ["y3"]
    assert ev.sigma2[2] == 0.0


def test_single_measure_not_separable():
    d = make_data(lam=(1.0,), sd=(1.0,))
    with pytest.raises(ValidationError):
        estimate_error_variances(d, [1.0])


def test_inverse_variance_weights():
    s = make_weights("inverse_variance", [1.0, 2.0, 0.5], [1.0, 2.0, 0.25])
    prec = np.array([1.0, 2.0, 1.0])
    np.testing.assert_allclose(s.weights, prec / prec.sum())
    assert make_weights("optimal", [1.0, 2.0, 0.5], [1.0, 2.0, 0.25]).kind == "inverse_variance"


def test_noiseless_measure_takes_all_weight():
    s = make_weights("inverse_variance", [1.0, 2.0], [1.0, 0.0])
    np.testing.assert_array_equal(s.weights, [0.0, 1.0])
    assert s.flags


def test_covariance_optimal_reduces_to_inverse_variance():
    lam, s2 = [1.0, 0.7, 1.8], [0.5, 1.2, 2.0]
    a = make_weights("covariance_optimal", lam, s2)
    b = make_weights("inverse_variance", lam, s2)
    np.testing.assert_allclose(a.weights, b.weights, atol=1e-12)


@given(
    arrays(float, 3, elements=st.floats(0.3, 3.0)),
    st.floats(-0.6, 0.6),
    arrays(float, 3, elements=st.floats(-1.0, 1.0)),
)
def test_covariance_optimal_minimizes_index_variance(lam, rho, direction):
    sd = np.array([1.0, 1.5, 0.8])
    R = np.array([[1.0, rho, 0.0], [rho, 1.0, rho / 2], [0.0, rho / 2, 1.0]])
    E = np.outer(sd, sd) * R
    w = make_weights("covariance_optimal", lam, error_cov=E).weights
    Sig = np.diag(1 / lam) @ E @ np.diag(1 / lam)
    d = direction - direction.mean()  # stays on the sum-to-one plane
    assert w @ Sig @ w <= (w + 0.1 * d) @ Sig @ (w + 0.1 * d) + 1e-12
    assert w.sum() == pytest.approx(1.0)


def test_covariance_optimal_needs_pd():
    with pytest.raises(NotPositiveDefiniteError):
        make_weights("covariance_optimal", [1.0, 1.0], error_cov=[[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ScalingError):
        make_weights("covariance_optimal", [1.0, 0.0], [1.0, 1.0])


def test_user_and_unknown_weights():
    assert make_weights("user", weights=[0.25, 0.75]).weights.tolist() == [0.25, 0.75]
    with pytest.raises(ValidationError):
        make_weights("user", weights=[0.5, 0.6])
    with pytest.raises(ValidationError):
        make_weights("magic", [1.0], [1.0])


def test_build_wsi(data):
    lam = np.array([1.0, 0.8, 1.5])
    scheme = WeightScheme("user", np.array([0.2, 0.3, 0.5]))
    w = build_wsi(data, lam, scheme)
    np.testing.assert_allclose(w.values, data.outcomes @ (scheme.weights / lam))
    np.testing.assert_allclose(w.coefficients, scheme.weights / lam)


def test_build_wsi_zero_scaling(data):
    with pytest.raises(ScalingError):
        build_wsi(data, [1.0, 0.0, 1.0], make_weights("equal", J=3))


def test_transformer_matches_functional(data):
    tr = WeightedScaledIndex().fit(data)
    sc = lambda_combined(data, 0)
    ev = estimate_error_variances(data, sc)
    w = build_wsi(data, sc, make_weights("inverse_variance", sc, ev))
    np.testing.assert_allclose(tr.transform(data)[:, 0], w.values, atol=1e-12)
    out = WeightedScaledIndex().fit_transform(data.outcomes, data.treatments)
    np.testing.assert_allclose(out[:, 0], w.values, atol=1e-12)


def test_transformer_known_scaling_and_clone(data):
    tr = WeightedScaledIndex(scaling=[1.0, 0.8, 1.5], weights="equal")
    c = clone(tr)
    assert c.get_params()["scaling"] == [1.0, 0.8, 1.5]
    c.fit(data)
    np.testing.assert_allclose(c.coef_, np.array([1, 1 / 0.8, 1 / 1.5]) / 3)
    with pytest.raises(ValidationError):
        c.transform(np.ones((5, 2)))


def test_known_scaling_estimate_roundtrip(data):
    sc = ScalingEstimate.known([1.0, 0.8, 1.5], 0, data.outcome_names)
    ev = estimate_error_variances(data, sc)
    assert ev.sigma2.shape == (3,)
