"""Exception hierarchy shared by every module.

Each class maps to one failure family so that callers (and the CLI exit
codes) can distinguish bad input from a failed estimation.
"""

from __future__ import annotations


class AlteError(Exception):
    """Base class for all package errors."""


class ValidationError(AlteError, ValueError):
    """Input data or arguments violate a documented contract."""


class SchemaError(ValidationError):
    """A column named in an ingestion schema is missing from the file."""


class DegenerateDesignError(ValidationError):
    """The treatment assignment cannot support a contrast (empty or constant arm)."""


class IndexCollisionError(ValidationError):
    """An instrument measure coincides with the instrumented or reference measure."""


class EstimationError(AlteError, RuntimeError):
    """An estimator could not produce a result for valid input."""


class WeakInstrumentError(EstimationError):
    """The first-stage covariance is numerically zero.

    Attributes
    ----------
    first_stage_f : float
        First-stage F statistic of the offending instrument set.
    """

    def __init__(self, message: str, first_stage_f: float = float("nan")):
        super().__init__(message)
        self.first_stage_f = first_stage_f


class ScalingError(EstimationError, ZeroDivisionError):
    """A measure with nonzero weight has a zero scaling parameter."""


class NotPositiveDefiniteError(EstimationError):
    """A covariance matrix that must be positive definite is not.

    Attributes
    ----------
    eigenvalue : float
        Smallest eigenvalue found.
    """

    def __init__(self, message: str, eigenvalue: float = float("nan")):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class RankDeficiencyError(EstimationError):
    """A design matrix is rank deficient.

    Attributes
    ----------
    columns : list of str
        Names of columns involved in the linear dependence.
    """

    def __init__(self, message: str, columns: list[str] | None = None):
        super().__init__(message)
        self.columns = list(columns or [])


class ConvergenceError(EstimationError):
    """An iterative solver stopped before meeting its tolerance.

    Attributes
    ----------
    norm : float
        Residual or gradient norm at the last iterate.
    """

    def __init__(self, message: str, norm: float = float("nan")):
        super().__init__(message)
        self.norm = norm


class IrrelevanceError(EstimationError):
    """The instrument carries no information about the latent shift."""


class UnderIdentificationError(EstimationError):
    """A linear system has fewer independent equations than unknowns.

    Attributes
    ----------
    rank : int
        Numerical rank of the system.
    """

    def __init__(self, message: str, rank: int = -1):
        super().__init__(message)
        self.rank = rank


class DegenerateTestError(EstimationError):
    """A specification test cannot be formed on the given pair of measures."""


class NestingError(ValidationError):
    """Two structural models passed to a nested comparison are not nested."""
