import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from alte.dataset import ExperimentData

settings.register_profile(
    "default", max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_data(n=400, lam=(1.0, 0.8, 1.5), sd=(1.0, 1.0, 1.0), tau=0.5, seed=0, covariate=False,
              intercepts=None):
    """Balanced two-arm experiment from the linear measurement model."""
    rng = np.random.default_rng(seed)
    z = np.zeros(n)
    z[rng.permutation(n)[: n // 2]] = 1.0
    x = rng.standard_normal(n)
    eta = tau * z + (0.8 * x if covariate else 0.0) + rng.standard_normal(n)
    lam = np.asarray(lam, dtype=float)
    a = np.zeros(lam.size) if intercepts is None else np.asarray(intercepts, dtype=float)
    Y = a + np.outer(eta, lam) + rng.standard_normal((n, lam.size)) * np.asarray(sd)
    X = x[:, None] if covariate else None
    return ExperimentData(z, Y, X)


@pytest.fixture
def data():
    return make_data()


@pytest.fixture
def data_cov():
    return make_data(covariate=True, seed=3)


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield
