import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alte.exceptions import ValidationError
from alte.index import make_weights
from alte.planner import (
    DesignProblem,
    error_variance_for_reliability,
    forecast_variance,
    marginal_tables,
    optimize_budget,
)


def _problem(sigma2, budget=5000.0, cm=1000.0, co=10.0, n=500):
    return DesignProblem(n=n, J=1, budget=budget, cost_measure=cm, cost_subject=co, sigma2=sigma2)


@pytest.mark.parametrize("reliability, expected", [(0.75, (1, 400)), (0.4, (2, 300))])
def test_published_allocations(reliability, expected):
    sol = optimize_budget(_problem(error_variance_for_reliability(reliability)))
    assert (sol.extra_measures, sol.extra_subjects) == expected
    assert sol.cost <= 5000


@pytest.mark.parametrize("sigma2, expected", [(0.379, (1, 400)), (1.701, (2, 300))])
def test_published_allocations_with_stated_error_variances(sigma2, expected):
    sol = optimize_budget(_problem(sigma2))
    assert (sol.extra_measures, sol.extra_subjects) == expected


def test_solution_text():
    assert str(optimize_budget(_problem(0.379))) == "(1 measure, 400 subjects)"
    assert str(optimize_budget(_problem(1.701))) == "(2 measures, 300 subjects)"


def test_reliability_mapping():
    assert error_variance_for_reliability(0.4) == pytest.approx(1.5)
    assert error_variance_for_reliability(0.75) == pytest.approx(1 / 3)
    assert error_variance_for_reliability(0.5, latent_variance=2.0, lambda_=3.0) == pytest.approx(18.0)
    with pytest.raises(ValidationError):
        error_variance_for_reliability(0.0)


@given(
    st.lists(st.floats(0.3, 3.0), min_size=1, max_size=5),
    st.lists(st.floats(0.1, 4.0), min_size=5, max_size=5),
    st.integers(20, 2000),
    st.integers(20, 2000),
)
def test_forecast_matches_weighted_error_variance(lam, s2, n1, n0):
    lam = np.asarray(lam)
    s2 = np.asarray(s2[: lam.size])
    w = make_weights("inverse_variance", lam, s2).weights
    measurement = np.sum(w**2 * s2 / lam**2)
    expected = 1.0 / n1 + 1.0 / n0 + (1.0 / n1 + 1.0 / n0) * measurement
    assert forecast_variance(n1, n0, lam, s2) == pytest.approx(expected, rel=1e-12)


def test_noiseless_measure_removes_measurement_term():
    assert forecast_variance(100, 100, [1.0, 2.0], [1.0, 0.0]) == pytest.approx(0.02)


def _brute_force(p: DesignProblem):
    best = None
    for j, k in itertools.product(range(20), range(0, 2000, 2)):
        if j * p.cost_measure + k * p.cost_subject > p.budget + 1e-9:
            continue
        v = p.variance(j, k)
        key = (v, j, k)
        if best is None or key < best:
            best = key
    return best


@given(st.floats(0.1, 3.0), st.integers(0, 6000), st.sampled_from([250.0, 500.0, 1000.0]),
       st.sampled_from([5.0, 10.0, 20.0]))
def test_matches_independent_enumeration(sigma2, budget, cm, co):
    p = _problem(sigma2, budget, cm, co)
    sol = optimize_budget(p)
    v, j, k = _brute_force(p)
    assert sol.variance == pytest.approx(v, rel=1e-12)
    assert (sol.extra_measures, sol.extra_subjects) == (j, k)


@given(st.floats(0.1, 3.0), st.integers(0, 6000), st.floats(0.01, 100.0))
def test_scale_invariance(sigma2, budget, c):
    a = optimize_budget(_problem(sigma2, budget))
    b = optimize_budget(_problem(sigma2, budget * c, 1000.0 * c, 10.0 * c))
    assert (a.extra_measures, a.extra_subjects) == (b.extra_measures, b.extra_subjects)


@given(st.floats(0.1, 3.0), st.integers(0, 5000), st.integers(0, 3000))
def test_more_budget_never_hurts(sigma2, budget, extra):
    a = optimize_budget(_problem(sigma2, budget))
    b = optimize_budget(_problem(sigma2, budget + extra))
    assert b.variance <= a.variance + 1e-15


def test_zero_budget():
    sol = optimize_budget(_problem(1.0, budget=0.0))
    assert (sol.extra_measures, sol.extra_subjects) == (0, 0)
    assert sol.reduction == 0.0


def test_frontier_contents():
    sol = optimize_budget(_problem(1.0))
    f = sol.frontier
    assert (f["cost"] <= 5000 + 1e-9).all()
    assert (f["extra_subjects"] % 2 == 0).all()
    assert f["variance"].min() == sol.variance


@given(st.floats(0.1, 5.0), st.integers(50, 5000))
def test_marginal_tables(sigma2, n):
    p = DesignProblem(n=n, J=1, sigma2=sigma2)
    t = marginal_tables(p, J_grid=(1, 2, 3, 4, 5)).set_index("J")
    for J in (1, 2, 3, 4):
        lam, s2 = np.ones(J), np.full(J, sigma2)
        v = forecast_variance(n / 2, n / 2, lam, s2)
        v_next = forecast_variance(n / 2, n / 2, np.ones(J + 1), np.full(J + 1, sigma2))
        assert t.loc[J, "variance"] == pytest.approx(v, rel=1e-12)
        assert t.loc[J, "delta"] == pytest.approx(v_next - v, rel=1e-9)
        assert t.loc[J, "ratio"] == pytest.approx(J / (J + 2), rel=1e-12)
        m = t.loc[J, "subjects_per_arm_equivalent"]
        assert forecast_variance(n / 2 + m, n / 2 + m, lam, s2) == pytest.approx(v_next, rel=1e-9)
    v1 = forecast_variance(n / 2, n / 2, [1.0], [sigma2])
    q = t.loc[1, "one_third_rule_per_arm"]
    assert forecast_variance(n / 2 + q, n / 2 + q, [1.0], [sigma2]) == pytest.approx(2 * v1 / 3, rel=1e-12)


def test_problem_validation():
    with pytest.raises(ValidationError):
        DesignProblem(n=1)
    with pytest.raises(ValidationError):
        DesignProblem(n=100, budget=-1)
    with pytest.raises(ValidationError):
        DesignProblem.from_dict({"n": 100, "colour": "red"})
    p = DesignProblem.from_dict({"n": 100, "J": 2, "sigma2": [1.0, 2.0], "lambda_": [1.0, 0.5]})
    assert DesignProblem.from_dict(p.to_dict()).to_dict() == p.to_dict()
