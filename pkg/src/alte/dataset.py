"""Experimental data model, CSV ingestion and sample moments."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import DegenerateDesignError, SchemaError, ValidationError

__all__ = [
    "ExperimentData",
    "CellMoments",
    "MomentSummary",
    "ingest_csv",
    "moments",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _as_2d(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be one- or two-dimensional")
    return arr


def _check_treatment_column(values: np.ndarray, name: str) -> None:
    distinct = np.unique(values)
    if distinct.size > 2:
        raise DegenerateDesignError(
            f"treatment column {name!r} takes {distinct.size} values; "
            "split a multi-valued assignment into 0/1 indicator columns"
        )
    if distinct.size < 2:
        raise DegenerateDesignError(f"treatment column {name!r} is constant")
    if not np.array_equal(distinct, [0.0, 1.0]):
        raise ValidationError(
            f"treatment column {name!r} must be coded 0/1, found {distinct.tolist()}"
        )


@dataclass(frozen=True, eq=False)
class ExperimentData:
    """Unit-level data from a randomized experiment.

    Parameters
    ----------
    treatments : array_like, shape (n, T)
        0/1 assignment indicators, one column per arm against a common
        control.
    outcomes : array_like, shape (n, J)
        Outcome measures.
    covariates : array_like, shape (n, p), optional
        Pre-treatment covariates.
    treatment_names, outcome_names, covariate_names : sequence of str, optional
        Column labels. Defaults are ``z1..``, ``y1..`` and ``x1..``.
    dropped : int
        Number of rows removed during ingestion because of missing values.

    Notes
    -----
    Arrays are copied and marked read-only, so instances can be shared
    freely between threads and processes.
    """

    treatments: np.ndarray
    outcomes: np.ndarray
    covariates: np.ndarray | None = None
    treatment_names: tuple[str, ...] | None = None
    outcome_names: tuple[str, ...] | None = None
    covariate_names: tuple[str, ...] | None = None
    dropped: int = 0

    def __post_init__(self):
        z = _as_2d(self.treatments, "treatments")
        y = _as_2d(self.outcomes, "outcomes")
        n = z.shape[0]
        if self.covariates is None:
            x = np.empty((n, 0))
        else:
            x = _as_2d(self.covariates, "covariates")
        if y.shape[0] != n or x.shape[0] != n:
            raise ValidationError(
                "treatments, outcomes and covariates must have the same number of rows"
            )
        if z.shape[1] < 1:
            raise ValidationError("at least one treatment column is required")
        if y.shape[1] < 1:
            raise ValidationError("at least one outcome column is required")
        for name, arr in (("treatments", z), ("outcomes", y), ("covariates", x)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contain missing or non-finite values")

        tn = self._names(self.treatment_names, z.shape[1], "z")
        yn = self._names(self.outcome_names, y.shape[1], "y")
        xn = self._names(self.covariate_names, x.shape[1], "x")
        labels = tn + yn + xn
        if len(set(labels)) != len(labels):
            raise ValidationError(f"column labels must be unique, got {labels}")
        for t in range(z.shape[1]):
            _check_treatment_column(z[:, t], tn[t])

        T, J, p = z.shape[1], y.shape[1], x.shape[1]
        if n < J + T + p + 1:
            raise ValidationError(
                f"n={n} is too small for J={J}, T={T}, p={p} (need n >= J + T + p + 1)"
            )

        object.__setattr__(self, "treatments", _frozen(z))
        object.__setattr__(self, "outcomes", _frozen(y))
        object.__setattr__(self, "covariates", _frozen(x))
        object.__setattr__(self, "treatment_names", tn)
        object.__setattr__(self, "outcome_names", yn)
        object.__setattr__(self, "covariate_names", xn)
        object.__setattr__(self, "dropped", int(self.dropped))
        keys, inv = np.unique(z.astype(int), axis=0, return_inverse=True)
        codes = inv.ravel()
        codes.setflags(write=False)
        object.__setattr__(self, "_cell_keys", [tuple(int(v) for v in k) for k in keys])
        object.__setattr__(self, "_cell_codes", codes)

    @staticmethod
    def _names(names, k: int, prefix: str) -> tuple[str, ...]:
        if names is None:
            return tuple(f"{prefix}{i + 1}" for i in range(k))
        names = tuple(str(s) for s in names)
        if len(names) != k:
            raise ValidationError(f"expected {k} {prefix}-labels, got {len(names)}")
        return names

    @property
    def n(self) -> int:
        return self.outcomes.shape[0]

    @property
    def J(self) -> int:
        return self.outcomes.shape[1]

    @property
    def T(self) -> int:
        return self.treatments.shape[1]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def labels(self) -> tuple[str, ...]:
        return self.treatment_names + self.outcome_names + self.covariate_names

    @property
    def control(self) -> np.ndarray:
        """Boolean mask of units assigned to no arm."""
        return ~self.treatments.any(axis=1)

    @property
    def cells(self) -> np.ndarray:
        """Integer code of each unit's treatment cell.

        Codes follow the order of :meth:`cell_keys`.
        """
        return self._cell_codes

    def cell_keys(self) -> list[tuple[int, ...]]:
        """Distinct treatment cells as tuples of 0/1, sorted."""
        return list(self._cell_keys)

    def arm_counts(self, arm: int = 0) -> tuple[int, int]:
        """Treated and control counts for one arm.

        With several arms the comparison group is the pure control cell.
        """
        treated = self.treatments[:, arm] == 1
        ctrl = self.control if self.T > 1 else ~treated
        return int(treated.sum()), int(ctrl.sum())

    def measure_index(self, measure: int | str) -> int:
        """Resolve an outcome given by position or label."""
        return _resolve(measure, self.outcome_names, "outcome")

    def treatment_index(self, arm: int | str) -> int:
        return _resolve(arm, self.treatment_names, "treatment")

    def covariate_index(self, cov: int | str) -> int:
        return _resolve(cov, self.covariate_names, "covariate")

    def with_outcomes(self, outcomes, names: Sequence[str] | None = None) -> "ExperimentData":
        """Return a copy with the outcome block replaced."""
        return ExperimentData(
            self.treatments,
            outcomes,
            self.covariates,
            self.treatment_names,
            names,
            self.covariate_names,
            self.dropped,
        )

    def select_outcomes(self, measures: Sequence[int | str]) -> "ExperimentData":
        """Return a copy that keeps only the listed outcome measures."""
        idx = [self.measure_index(m) for m in measures]
        return self.with_outcomes(
            self.outcomes[:, idx], [self.outcome_names[i] for i in idx]
        )

    def take(self, rows) -> "ExperimentData":
        """Row subset, used by resampling routines."""
        rows = np.asarray(rows)
        return ExperimentData(
            self.treatments[rows],
            self.outcomes[rows],
            self.covariates[rows],
            self.treatment_names,
            self.outcome_names,
            self.covariate_names,
        )

    def to_frame(self) -> pd.DataFrame:
        block = np.column_stack([self.treatments, self.outcomes, self.covariates])
        return pd.DataFrame(block, columns=list(self.labels))

    def summary(self) -> dict:
        """JSON-ready description of the data set."""
        keys = self.cell_keys()
        counts = np.bincount(self.cells, minlength=len(keys))
        return {
            "n": self.n,
            "J": self.J,
            "T": self.T,
            "p": self.p,
            "dropped_rows": self.dropped,
            "treatments": list(self.treatment_names),
            "outcomes": list(self.outcome_names),
            "covariates": list(self.covariate_names),
            "cells": [
                {"cell": list(k), "count": int(c)} for k, c in zip(keys, counts)
            ],
            "means": dict(zip(self.labels, self.to_frame().mean().round(12).tolist())),
        }


def _resolve(key, names: Sequence[str], what: str) -> int:
    if isinstance(key, (int, np.integer)):
        k = int(key)
        if not 0 <= k < len(names):
            raise ValidationError(f"{what} index {k} out of range 0..{len(names) - 1}")
        return k
    try:
        return list(names).index(str(key))
    except ValueError:
        raise ValidationError(f"unknown {what} {key!r}; available: {list(names)}") from None


def ingest_csv(path: str | os.PathLike, schema: Mapping[str, Sequence[str] | str]) -> ExperimentData:
    """Read and validate an experiment from a CSV file.

    Parameters
    ----------
    path : path-like
        UTF-8 CSV file with a header row.
    schema : mapping
        Column roles with keys ``treatment`` (or ``treatments``),
        ``outcomes`` and optionally ``covariates``. Values are a column
        name or a list of names; order is preserved.

    Returns
    -------
    ExperimentData
        Rows with any missing value in a used column are dropped, and the
        count is stored in ``dropped``.
    """
    roles = _normalize_schema(schema)
    if not os.path.exists(path):
        raise ValidationError(f"file not found: {path}")
    frame = pd.read_csv(path, encoding="utf-8")
    used = roles["treatments"] + roles["outcomes"] + roles["covariates"]
    missing = [c for c in used if c not in frame.columns]
    if missing:
        raise SchemaError(f"column(s) not found in {os.fspath(path)}: {missing}")
    sub = frame[used].apply(pd.to_numeric, errors="coerce")
    keep = sub.notna().all(axis=1)
    dropped = int((~keep).sum())
    sub = sub[keep]
    return ExperimentData(
        sub[roles["treatments"]].to_numpy(float),
        sub[roles["outcomes"]].to_numpy(float),
        sub[roles["covariates"]].to_numpy(float),
        roles["treatments"],
        roles["outcomes"],
        roles["covariates"],
        dropped,
    )


def _normalize_schema(schema) -> dict[str, list[str]]:
    def as_list(v):
        if v is None:
            return []
        if isinstance(v, str):
            return [s.strip() for s in v.split(",") if s.strip()]
        return [str(s) for s in v]

    out = {
        "treatments": as_list(schema.get("treatments", schema.get("treatment"))),
        "outcomes": as_list(schema.get("outcomes")),
        "covariates": as_list(schema.get("covariates")),
    }
    if not out["treatments"]:
        raise SchemaError("schema must name at least one treatment column")
    if not out["outcomes"]:
        raise SchemaError("schema must name at least one outcome column")
    return out


@dataclass(frozen=True, eq=False)
class CellMoments:
    """Moments within one treatment cell."""

    count: int
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class MomentSummary:
    """Sample moments of all observed columns.

    Column order is treatments, outcomes, covariates. Covariances use the
    ``n - 1`` denominator.
    """

    columns: tuple[str, ...]
    n: int
    mean: np.ndarray
    cov: np.ndarray
    cells: dict = field(default_factory=dict)

    def block(self, rows: Sequence[str], cols: Sequence[str] | None = None) -> np.ndarray:
        """Sub-matrix of the covariance selected by column labels."""
        cols = rows if cols is None else cols
        idx = {c: i for i, c in enumerate(self.columns)}
        return self.cov[np.ix_([idx[r] for r in rows], [idx[c] for c in cols])]

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "n": self.n,
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "cells": [
                {"cell": list(k), "count": c.count, "mean": c.mean.tolist(), "cov": c.cov.tolist()}
                for k, c in self.cells.items()
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _cov(block: np.ndarray) -> np.ndarray:
    m = block.shape[0]
    if m < 2:
        return np.zeros((block.shape[1], block.shape[1]))
    d = block - block.mean(axis=0)
    c = d.T @ d / (m - 1)
    return (c + c.T) / 2


def moments(data: ExperimentData) -> MomentSummary:
    """Compute means and unbiased covariances, overall and per treatment cell."""
    block = np.column_stack([data.treatments, data.outcomes, data.covariates])
    cells = {}
    codes = data.cells
    for code, key in enumerate(data.cell_keys()):
        rows = block[codes == code]
        cells[key] = CellMoments(rows.shape[0], rows.mean(axis=0), _cov(rows))
    return MomentSummary(
        columns=data.labels,
        n=data.n,
        mean=block.mean(axis=0),
        cov=_cov(block),
        cells=cells,
    )
