"""Measurement bridges for measures with finite support.

A bridge ``h_j`` maps each value of measure ``j`` onto the reference scale
so that ``E[h_j(Y_j) | W] = E[Y_ref | W]`` holds in every instrument cell
``W``. With a binary measure and a binary treatment the system is 2x2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg

from .dataset import ExperimentData
from .estimate import AlteResult, bootstrap, dim_wsi, ols_adjusted
from .exceptions import IrrelevanceError, UnderIdentificationError, ValidationError
from .identify import ScalingEstimate, lambda_combined
from .index import build_wsi, estimate_error_variances, make_weights

__all__ = [
    "BridgeFunction",
    "solve_bridge_binary",
    "solve_bridge_discrete",
    "instrument_cells",
    "alte_with_bridges",
]


@dataclass(eq=False)
class BridgeFunction:
    """Value table mapping a finite-support measure onto the reference scale.

    Attributes
    ----------
    measure : str
        Bridged measure.
    reference : str
        Reference measure.
    support : tuple of float
        Sorted distinct observed values.
    h : ndarray
        Bridged value for each support point.
    instrument : str
        Description of the conditioning cells.
    rank : int
        Rank of the cell-by-support probability matrix.
    n_cells : int
    """

    measure: str
    reference: str
    support: tuple
    h: np.ndarray
    instrument: str
    rank: int
    n_cells: int
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.support) < 2:
            raise ValidationError("a bridge needs at least two support points")
        self.h = np.asarray(self.h, dtype=float)

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        sup = np.asarray(self.support)
        pos = np.searchsorted(sup, y)
        pos = np.clip(pos, 0, sup.size - 1)
        if not np.array_equal(sup[pos], y):
            bad = np.unique(y[sup[pos] != y])[:5]
            raise ValidationError(f"values {bad.tolist()} of {self.measure!r} are outside the bridge support")
        return self.h[pos]

    def to_dict(self) -> dict:
        return {
            "measure": self.measure,
            "reference": self.reference,
            "instrument": self.instrument,
            "rank": int(self.rank),
            "n_cells": int(self.n_cells),
            "table": [{"value": float(v), "h": float(h)} for v, h in zip(self.support, self.h)],
            "flags": list(self.flags),
        }


def instrument_cells(
    data: ExperimentData,
    arms: Sequence[int | str] | None = None,
    covariate_bins: Mapping[int | str, int] | None = None,
) -> tuple[np.ndarray, str]:
    """Cell codes from treatment cells crossed with covariate quantile bins.

    Returns
    -------
    codes : ndarray of int
        Dense cell index per unit.
    label : str
        Human-readable description.
    """
    arm_idx = list(range(data.T)) if arms is None else [data.treatment_index(a) for a in arms]
    cols = [data.treatments[:, a] for a in arm_idx]
    parts = [",".join(data.treatment_names[a] for a in arm_idx)]
    for cov, bins in (covariate_bins or {}).items():
        c = data.covariate_index(cov)
        x = data.covariates[:, c]
        edges = np.quantile(x, np.linspace(0, 1, int(bins) + 1)[1:-1])
        cols.append(np.searchsorted(edges, x, side="right").astype(float))
        parts.append(f"{data.covariate_names[c]}[{int(bins)} bins]")
    key = np.column_stack(cols)
    _, codes = np.unique(key, axis=0, return_inverse=True)
    return codes.ravel(), " x ".join(parts)


def _cell_system(y: np.ndarray, ref: np.ndarray, codes: np.ndarray):
    support = np.unique(y)
    n_cells = int(codes.max()) + 1
    P = np.zeros((n_cells, support.size))
    m = np.zeros(n_cells)
    share = np.zeros(n_cells)
    s_idx = np.searchsorted(support, y)
    for w in range(n_cells):
        sel = codes == w
        cnt = sel.sum()
        P[w] = np.bincount(s_idx[sel], minlength=support.size) / cnt
        m[w] = ref[sel].mean()
        share[w] = cnt / y.size
    return support, P, m, share


def solve_bridge_binary(data: ExperimentData, j: int | str, reference: int | str = 0, arm: int | str = 0) -> BridgeFunction:
    """Exact two-equation bridge for a binary measure and one binary arm.

    Solves ``h1 P[Y_j=hi | Z=z] + h0 P[Y_j=lo | Z=z] = E[Y_ref | Z=z]`` for
    ``z`` in {0, 1}.

    Raises
    ------
    IrrelevanceError
        When ``P[Y_j=hi | Z]`` does not move with the treatment.
    """
    jj, rr, a = data.measure_index(j), data.measure_index(reference), data.treatment_index(arm)
    y, ref = data.outcomes[:, jj], data.outcomes[:, rr]
    support = np.unique(y)
    if support.size != 2:
        raise ValidationError(f"measure {data.outcome_names[jj]!r} takes {support.size} values, expected 2")
    z = data.treatments[:, a] == 1
    ctrl = data.control if data.T > 1 else ~z
    hi = y == support[1]
    rows, rhs = [], []
    for sel in (z, ctrl):
        if sel.sum() == 0 or hi[sel].all() or not hi[sel].any():
            raise ValidationError("both measure values must occur in both arms")
        p = hi[sel].mean()
        rows.append([1.0 - p, p])
        rhs.append(ref[sel].mean())
    A = np.array(rows)
    det = A[0, 1] - A[1, 1]
    if abs(det) < 1e-12:
        raise IrrelevanceError(
            f"P[{data.outcome_names[jj]} high] is identical across arms; the treatment carries no information"
        )
    h = np.linalg.solve(A, np.array(rhs))
    return BridgeFunction(
        data.outcome_names[jj], data.outcome_names[rr], tuple(support.tolist()), h,
        data.treatment_names[a], 2, 2,
    )


def solve_bridge_discrete(
    data: ExperimentData,
    j: int | str,
    reference: int | str = 0,
    arms: Sequence[int | str] | None = None,
    covariate_bins: Mapping[int | str, int] | None = None,
    rtol: float = 1e-8,
) -> BridgeFunction:
    """Least-squares bridge for a measure with finite support.

    Each instrument cell ``w`` contributes ``sum_s h(s) P[Y_j=s | w] =
    E[Y_ref | w]``; rows are weighted by the square root of the cell share.

    Parameters
    ----------
    data : ExperimentData
    j, reference : int or str
    arms : sequence, optional
        Treatment columns defining cells (all by default).
    covariate_bins : mapping, optional
        Covariate to number of quantile bins crossed with the arms.
    rtol : float
        Relative singular-value cutoff for the rank.

    Raises
    ------
    UnderIdentificationError
        When the cell-by-support matrix has rank below the support size.
    """
    jj, rr = data.measure_index(j), data.measure_index(reference)
    y, ref = data.outcomes[:, jj], data.outcomes[:, rr]
    codes, label = instrument_cells(data, arms, covariate_bins)
    support, P, m, share = _cell_system(y, ref, codes)
    K = support.size
    if K < 2:
        raise ValidationError(f"measure {data.outcome_names[jj]!r} is constant")
    wts = np.sqrt(share)
    A = P * wts[:, None]
    b = m * wts
    s = linalg.svdvals(A)
    rank = int((s > rtol * s[0]).sum()) if s.size else 0
    if rank < K:
        raise UnderIdentificationError(
            f"bridge for {data.outcome_names[jj]!r} needs rank {K} but the {P.shape[0]} instrument cells give rank {rank}",
            rank,
        )
    h = linalg.lstsq(A, b)[0]
    return BridgeFunction(
        data.outcome_names[jj], data.outcome_names[rr], tuple(support.tolist()), h, label, rank, P.shape[0],
    )


def _transform(data: ExperimentData, ref: int, bridged: Sequence[int], arm: int,
               covariate_bins) -> tuple[ExperimentData, dict]:
    Y = np.array(data.outcomes, dtype=float, copy=True)
    table = {}
    for j in bridged:
        if np.unique(Y[:, j]).size == 2 and not covariate_bins and data.T == 1:
            bf = solve_bridge_binary(data, j, ref, arm)
        else:
            bf = solve_bridge_discrete(data, j, ref, covariate_bins=covariate_bins)
        Y[:, j] = bf(data.outcomes[:, j])
        table[bf.measure] = bf
    return data.with_outcomes(Y), table


def alte_with_bridges(
    data: ExperimentData,
    bridges: Sequence[int | str],
    weights: str = "inverse_variance",
    reference: int | str = 0,
    arm: int | str = 0,
    instruments=("treatment", "measures"),
    covariate_bins: Mapping[int | str, int] | None = None,
    draws: int = 1000,
    seed: int = 42,
    n_jobs: int = 1,
) -> AlteResult:
    """Index estimate after mapping bridged measures onto the reference scale.

    Bridged measures get unit scaling; the remaining measures are scaled by
    instrumental variables on the transformed data. The standard error comes
    from a bootstrap that re-solves every bridge in each replicate.

    Parameters
    ----------
    data : ExperimentData
    bridges : sequence of int or str
        Measures to bridge (finite support).
    weights : {"inverse_variance", "equal"}
    reference, arm : int or str
    instruments : roster
        Instruments for the non-bridged measures.
    covariate_bins : mapping, optional
        Extra instrument cells from binned covariates.
    draws, seed, n_jobs
        Bootstrap settings; ``draws=0`` reports the Neyman error with the
        bridges treated as known.
    """
    ref = data.measure_index(reference)
    a = data.treatment_index(arm)
    bridged = sorted({data.measure_index(b) for b in bridges})
    if ref in bridged:
        raise ValidationError("the reference measure cannot be bridged")

    def pipeline(d: ExperimentData) -> AlteResult:
        dt, table = _transform(d, ref, bridged, a, covariate_bins)
        linear = [j for j in range(d.J) if j not in bridged and j != ref]
        lam = np.ones(d.J)
        if linear:
            roster = {d.outcome_names[j]: instruments for j in linear}
            for j in bridged:
                roster[d.outcome_names[j]] = ("treatment",)
            est = lambda_combined(dt, ref, roster)
            lam[linear] = est.lambda_[linear]
        sc = ScalingEstimate.known(lam, ref, d.outcome_names)
        if weights == "equal" or d.J == 1:
            scheme = make_weights("equal", J=d.J)
        else:
            scheme = make_weights(weights, sc, estimate_error_variances(dt, sc))
        wsi = build_wsi(dt, sc, scheme)
        res = ols_adjusted(dt, wsi)[d.treatment_names[a]] if d.T > 1 else dim_wsi(wsi, dt, a)
        res.estimator = "bridge_wsi"
        res.diagnostics["bridges"] = {k: v.to_dict() for k, v in table.items()}
        res.diagnostics["lambda"] = lam
        return res

    if draws and draws > 0:
        return bootstrap(pipeline, data, draws, seed, n_jobs)
    return pipeline(data)
