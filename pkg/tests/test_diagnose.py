import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given
from hypothesis import strategies as st
from statsmodels.stats.diagnostic import linear_rainbow, linear_reset

from alte.dataset import ExperimentData
from alte.diagnose import (
    linearity_report,
    rainbow_from_arrays,
    reset_from_arrays,
    reset_test,
    scatter_smooth,
    smooth_table,
)
from alte.exceptions import DegenerateTestError, ValidationError


def _xy(n=400, seed=0, curve=0.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    return 1 + 0.5 * x + curve * x**2 + rng.standard_normal(n), x


@given(st.integers(0, 10_000), st.floats(0.0, 0.5))
def test_reset_matches_statsmodels(seed, curve):
    y, x = _xy(seed=seed, curve=curve)
    ref = linear_reset(sm.OLS(y, sm.add_constant(x)).fit(), power=3, test_type="fitted", use_f=True)
    r = reset_from_arrays(y, x)
    assert r.statistic == pytest.approx(float(ref.fvalue), rel=1e-8)
    assert r.pvalue == pytest.approx(float(ref.pvalue), rel=1e-6, abs=1e-14)
    assert r.df == (2, 396)


@given(st.integers(0, 10_000), st.floats(0.0, 0.5))
def test_rainbow_matches_statsmodels(seed, curve):
    y, x = _xy(seed=seed, curve=curve)
    n = y.size
    central = np.argsort(np.abs(x - np.median(x)), kind="stable")[: n // 2]
    rest = np.setdiff1d(np.arange(n), central)
    low = int(np.ceil(0.25 * n))
    perm = np.concatenate([rest[:low], central, rest[low:]])
    f, p = linear_rainbow(sm.OLS(y, sm.add_constant(x)).fit(), frac=0.5, order_by=perm)
    r = rainbow_from_arrays(y, x)
    assert r.statistic == pytest.approx(f, rel=1e-8)
    assert r.pvalue == pytest.approx(p, rel=1e-6, abs=1e-14)


def test_reset_detects_curvature():
    y, x = _xy(n=2000, curve=0.4, seed=1)
    assert reset_from_arrays(y, x).pvalue < 1e-6


def test_reset_size_under_linearity():
    rej = [reset_from_arrays(*_xy(n=300, seed=s)).pvalue < 0.05 for s in range(300)]
    assert 0.02 <= np.mean(rej) <= 0.09


def test_binary_regressor_rejected():
    rng = np.random.default_rng(0)
    x = np.tile([0.0, 1.0], 50)
    with pytest.raises(DegenerateTestError):
        reset_from_arrays(rng.standard_normal(100), x)
    with pytest.raises(DegenerateTestError):
        rainbow_from_arrays(rng.standard_normal(100), x)


def test_invalid_arguments():
    y, x = _xy()
    with pytest.raises(ValidationError):
        reset_from_arrays(y, x, powers=(1,))
    with pytest.raises(ValidationError):
        rainbow_from_arrays(y, x, frac=1.5)


def test_dataset_wrappers(data):
    r = reset_test(data, 1, 0)
    assert r.pair == ("y2", "y1")
    rep = linearity_report(data)
    assert rep["reference"] == "y1"
    assert len(rep["tests"]) == 4
    assert rep["bonferroni_alpha"] == pytest.approx(0.05 / 4)


def test_report_records_untestable_pairs():
    rng = np.random.default_rng(0)
    z = np.tile([0.0, 1.0], 100)
    y1 = z + rng.standard_normal(200)
    y2 = (y1 + rng.standard_normal(200) > 0.5).astype(float)
    d = ExperimentData(z, np.column_stack([y2, y1]))
    rep = linearity_report(d, reference=0)
    assert all("error" in t for t in rep["tests"])
    assert rep["bonferroni_alpha"] is None


def test_smooth_table_series():
    y, x = _xy(n=200)
    t = smooth_table(x, y, bins=10)
    assert set(t["series"]) == {"points", "binned_mean", "local_linear", "ols"}
    assert (t["series"] == "binned_mean").sum() == 10
    ols = t[t["series"] == "ols"]
    coef = np.polyfit(x, y, 1)
    np.testing.assert_allclose(ols["y"], np.polyval(coef, ols["x"]), atol=1e-10)


def test_local_linear_reproduces_lines():
    x = np.linspace(-2, 2, 100)
    t = smooth_table(x, 3 - 2 * x, bins=8, span=0.3)
    ll = t[t["series"] == "local_linear"]
    np.testing.assert_allclose(ll["y"], 3 - 2 * ll["x"], atol=1e-10)


def test_scatter_smooth(data):
    t = scatter_smooth(data, 1, 0, bins=5)
    pts = t[t["series"] == "points"]
    np.testing.assert_array_equal(pts["x"], data.outcomes[:, 0])
    np.testing.assert_array_equal(pts["y"], data.outcomes[:, 1])
