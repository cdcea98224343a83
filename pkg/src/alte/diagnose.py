"""Linearity diagnostics for pairs of measures."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .dataset import ExperimentData
from .exceptions import DegenerateTestError, ValidationError

__all__ = [
    "SpecTestResult",
    "reset_test",
    "rainbow_test",
    "reset_from_arrays",
    "rainbow_from_arrays",
    "scatter_smooth",
    "smooth_table",
    "linearity_report",
]


@dataclass(eq=False)
class SpecTestResult:
    """F-type specification test of a linear relation ``Y_j ~ Y_k``."""

    test: str
    statistic: float
    df: tuple
    pvalue: float
    pair: tuple
    n: int
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "test": self.test,
            "statistic": float(self.statistic),
            "df": [int(d) for d in self.df],
            "pvalue": float(self.pvalue),
            "pair": list(self.pair),
            "n": int(self.n),
            "flags": list(self.flags),
        }


def _ssr(X: np.ndarray, y: np.ndarray) -> tuple[float, int]:
    coef, _, rank, _ = linalg.lstsq(X, y, lapack_driver="gelsy", cond=1e-10)
    r = y - X @ coef
    return float(r @ r), int(rank)


def _f_result(test, ssr_r, ssr_u, q, dfd, pair, n, flags=None) -> SpecTestResult:
    if dfd <= 0:
        raise ValidationError("not enough observations for the test")
    if ssr_u <= 0:
        raise DegenerateTestError("the unrestricted fit is exact; the test is undefined")
    F = max((ssr_r - ssr_u) / q, 0.0) / (ssr_u / dfd)
    return SpecTestResult(test, F, (q, dfd), float(stats.f.sf(F, q, dfd)), tuple(pair), n, flags or [])


def _check_regressor(x: np.ndarray, what: str) -> None:
    if np.unique(x).size <= 2:
        raise DegenerateTestError(
            f"{what} takes at most two values, so the augmented regression is collinear; "
            "build an additive index from several items before testing linearity"
        )


def reset_from_arrays(y, x, powers: Sequence[int] = (2, 3), pair=("y", "x")) -> SpecTestResult:
    """RESET test of ``y`` on ``x`` with powers of the fitted values.

    Fitted values are centred and scaled before powering when ``powers`` is
    a contiguous range starting at 2 (the augmented column space is then
    unchanged); otherwise they are only scaled.
    """
    y = np.asarray(y, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    powers = sorted({int(p) for p in powers})
    if not powers or powers[0] < 2:
        raise ValidationError("powers must be integers of at least 2")
    n = y.size
    if n <= 2 + len(powers):
        raise ValidationError(f"RESET needs more than {2 + len(powers)} observations")
    _check_regressor(x, "the regressor")
    X = np.column_stack([np.ones(n), x])
    coef = linalg.lstsq(X, y)[0]
    fitted = X @ coef
    sd = fitted.std()
    if sd == 0:
        raise DegenerateTestError("fitted values are constant; the regressor does not explain the outcome")
    contiguous = powers == list(range(2, powers[-1] + 1))
    f = (fitted - fitted.mean()) / sd if contiguous else fitted / sd
    Xa = np.column_stack([X] + [f**p for p in powers])
    ssr_r, _ = _ssr(X, y)
    ssr_u, rank = _ssr(Xa, y)
    if rank < Xa.shape[1]:
        raise DegenerateTestError("powers of the fitted values are collinear with the regressors")
    return _f_result("reset", ssr_r, ssr_u, len(powers), n - Xa.shape[1], pair, n)


def rainbow_from_arrays(y, x, frac: float = 0.5, pair=("y", "x")) -> SpecTestResult:
    """Rainbow test comparing the central subsample with the full sample.

    The central subsample holds the ``floor(frac * n)`` units closest to the
    median of ``x``.
    """
    y = np.asarray(y, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    if not 0 < frac < 1:
        raise ValidationError("frac must lie in (0, 1)")
    n = y.size
    m = int(np.floor(frac * n))
    if m < 10:
        raise ValidationError(f"central subsample has {m} observations; at least 10 are needed")
    _check_regressor(x, "the regressor")
    order = np.argsort(np.abs(x - np.median(x)), kind="stable")
    sub = order[:m]
    X = np.column_stack([np.ones(n), x])
    ssr_full, _ = _ssr(X, y)
    ssr_sub, rank = _ssr(X[sub], y[sub])
    if rank < 2:
        raise DegenerateTestError("the regressor is constant in the central subsample")
    k = X.shape[1]
    return _f_result("rainbow", ssr_full, ssr_sub, n - m, m - k, pair, n)


def reset_test(data: ExperimentData, j: int | str, k: int | str, powers: Sequence[int] = (2, 3)) -> SpecTestResult:
    """RESET test of measure ``j`` regressed on measure ``k``.

    Raises
    ------
    DegenerateTestError
        When measure ``k`` is binary.
    """
    jj, kk = data.measure_index(j), data.measure_index(k)
    return reset_from_arrays(
        data.outcomes[:, jj], data.outcomes[:, kk], powers, (data.outcome_names[jj], data.outcome_names[kk])
    )


def rainbow_test(data: ExperimentData, j: int | str, k: int | str, frac: float = 0.5) -> SpecTestResult:
    """Rainbow test of measure ``j`` regressed on measure ``k``."""
    jj, kk = data.measure_index(j), data.measure_index(k)
    return rainbow_from_arrays(
        data.outcomes[:, jj], data.outcomes[:, kk], frac, (data.outcome_names[jj], data.outcome_names[kk])
    )


def _local_linear(x: np.ndarray, y: np.ndarray, at: np.ndarray, span: float) -> np.ndarray:
    n = x.size
    q = min(n, max(3, int(np.ceil(span * n))))
    out = np.empty(at.size)
    for i, x0 in enumerate(at):
        d = np.abs(x - x0)
        idx = np.argpartition(d, q - 1)[:q]
        dmax = d[idx].max()
        if dmax == 0:
            out[i] = y[idx].mean()
            continue
        w = (1 - (d[idx] / (dmax * (1 + 1e-12))) ** 3) ** 3
        X = np.column_stack([np.ones(q), x[idx] - x0])
        sw = np.sqrt(w)
        coef = linalg.lstsq(X * sw[:, None], y[idx] * sw)[0]
        out[i] = coef[0]
    return out


def smooth_table(x, y, bins: int = 20, span: float = 0.75) -> pd.DataFrame:
    """Plot data: raw points, binned means, a local-linear smooth and the OLS line.

    Returns a tidy frame with columns ``series``, ``x``, ``y`` and ``se``
    (``se`` is set for binned means only). The smooth and the OLS line are
    evaluated at the bin centres.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    cols = ["series", "x", "y", "se"]
    if x.size == 0:
        return pd.DataFrame(columns=cols)
    rows = [pd.DataFrame({"series": "points", "x": x, "y": y, "se": np.nan})]
    order = np.argsort(x, kind="stable")
    groups = [g for g in np.array_split(order, min(bins, x.size)) if g.size]
    bx = np.array([x[g].mean() for g in groups])
    by = np.array([y[g].mean() for g in groups])
    bse = np.array([y[g].std(ddof=1) / np.sqrt(g.size) if g.size > 1 else np.nan for g in groups])
    rows.append(pd.DataFrame({"series": "binned_mean", "x": bx, "y": by, "se": bse}))
    if np.unique(x).size >= 2:
        rows.append(pd.DataFrame({"series": "local_linear", "x": bx, "y": _local_linear(x, y, bx, span), "se": np.nan}))
        X = np.column_stack([np.ones(x.size), x])
        coef = linalg.lstsq(X, y)[0]
        rows.append(pd.DataFrame({"series": "ols", "x": bx, "y": coef[0] + coef[1] * bx, "se": np.nan}))
    return pd.concat(rows, ignore_index=True)[cols]


def scatter_smooth(data: ExperimentData, j: int | str, k: int | str, bins: int = 20, span: float = 0.75) -> pd.DataFrame:
    """Smoothed scatter of measure ``j`` (vertical) against measure ``k``."""
    jj, kk = data.measure_index(j), data.measure_index(k)
    return smooth_table(data.outcomes[:, kk], data.outcomes[:, jj], bins, span)


def linearity_report(data: ExperimentData, reference: int | str = 0, alpha: float = 0.05) -> dict:
    """RESET and Rainbow tests of every measure against the reference.

    Tests that cannot be formed are reported with their error message. The
    Bonferroni threshold ``alpha / m`` over the ``m`` tests run is included.
    """
    ref = data.measure_index(reference)
    tests = []
    for j in range(data.J):
        if j == ref:
            continue
        for name, fn in (("reset", reset_test), ("rainbow", rainbow_test)):
            try:
                tests.append(fn(data, j, ref).to_dict())
            except (DegenerateTestError, ValidationError) as exc:
                tests.append({"test": name, "pair": [data.outcome_names[j], data.outcome_names[ref]], "error": str(exc)})
    m = sum("pvalue" in t for t in tests)
    return {
        "reference": data.outcome_names[ref],
        "tests": tests,
        "bonferroni_alpha": alpha / m if m else None,
        "note": "Bonferroni correction over all pairs tested against the reference",
    }
