import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alte.dataset import ExperimentData, ingest_csv, moments
from alte.exceptions import DegenerateDesignError, SchemaError, ValidationError

from conftest import make_data


def _frame(n=40, seed=0):
    rng = np.random.default_rng(seed)
    return pd.DataFrame({
        "z": np.tile([0, 1], n // 2),
        "a": rng.standard_normal(n),
        "b": rng.standard_normal(n),
        "x": rng.standard_normal(n),
    })


def test_ingest_roundtrip(tmp_path):
    f = _frame()
    path = tmp_path / "d.csv"
    f.to_csv(path, index=False)
    d = ingest_csv(path, {"treatment": "z", "outcomes": ["a", "b"], "covariates": "x"})
    assert d.outcome_names == ("a", "b")
    assert d.covariate_names == ("x",)
    np.testing.assert_allclose(d.outcomes, f[["a", "b"]].to_numpy(), rtol=1e-14)
    assert d.dropped == 0


def test_ingest_drops_missing_rows(tmp_path):
    f = _frame()
    f.loc[3, "a"] = np.nan
    f.loc[7, "x"] = np.nan
    path = tmp_path / "d.csv"
    f.to_csv(path, index=False)
    d = ingest_csv(path, {"treatment": "z", "outcomes": "a,b", "covariates": "x"})
    assert d.dropped == 2
    assert d.n == 38


def test_ingest_missing_column(tmp_path):
    path = tmp_path / "d.csv"
    _frame().to_csv(path, index=False)
    with pytest.raises(SchemaError):
        ingest_csv(path, {"treatment": "z", "outcomes": ["nope"]})


def test_ingest_missing_file(tmp_path):
    with pytest.raises(ValidationError):
        ingest_csv(tmp_path / "absent.csv", {"treatment": "z", "outcomes": ["a"]})


def test_schema_needs_roles(tmp_path):
    path = tmp_path / "d.csv"
    _frame().to_csv(path, index=False)
    with pytest.raises(SchemaError):
        ingest_csv(path, {"outcomes": ["a"]})


def test_treatment_coding():
    y = np.random.default_rng(0).standard_normal((20, 2))
    with pytest.raises(DegenerateDesignError):
        ExperimentData(np.tile([0, 1, 2, 1], 5), y)
    with pytest.raises(DegenerateDesignError):
        ExperimentData(np.zeros(20), y)
    with pytest.raises(ValidationError):
        ExperimentData(np.tile([1, 2], 10), y)


def test_size_rule():
    with pytest.raises(ValidationError):
        ExperimentData([0, 1, 0, 1], np.ones((4, 3)))


def test_duplicate_labels():
    y = np.random.default_rng(0).standard_normal((20, 2))
    with pytest.raises(ValidationError):
        ExperimentData(np.tile([0, 1], 10), y, outcome_names=["a", "a"])


def test_non_finite_rejected():
    y = np.random.default_rng(0).standard_normal((20, 2))
    y[0, 0] = np.inf
    with pytest.raises(ValidationError):
        ExperimentData(np.tile([0, 1], 10), y)


def test_arrays_are_read_only(data):
    with pytest.raises(ValueError):
        data.outcomes[0, 0] = 1.0


def test_select_and_lookup(data):
    sub = data.select_outcomes(["y3", 0])
    assert sub.outcome_names == ("y3", "y1")
    assert data.measure_index("y2") == 1
    with pytest.raises(ValidationError):
        data.measure_index("zz")


def test_moments_match_numpy(data_cov):
    m = moments(data_cov)
    block = np.column_stack([data_cov.treatments, data_cov.outcomes, data_cov.covariates])
    np.testing.assert_allclose(m.cov, np.cov(block.T), atol=1e-12)
    np.testing.assert_allclose(m.mean, block.mean(axis=0), atol=1e-12)
    for key, c in m.cells.items():
        rows = block[(data_cov.treatments[:, 0] == key[0])]
        assert c.count == rows.shape[0]
        np.testing.assert_allclose(c.cov, np.cov(rows.T), atol=1e-12)
    assert sum(c.count for c in m.cells.values()) == data_cov.n


@given(st.integers(0, 10_000))
def test_moments_symmetric_psd(seed):
    m = moments(make_data(n=60, seed=seed))
    np.testing.assert_array_equal(m.cov, m.cov.T)
    assert np.linalg.eigvalsh(m.cov).min() > -1e-10
