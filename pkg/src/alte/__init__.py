"""Average latent treatment effects from experiments with several noisy outcome measures."""

from .dataset import ExperimentData, MomentSummary, ingest_csv, moments
from .identify import ScalingEstimate, lambda_combined, lambda_measure_iv, lambda_treatment_iv
from .index import (
    ErrorVarianceEstimate,
    WeightedScaledIndex,
    WeightScheme,
    WsiOutcome,
    build_wsi,
    estimate_error_variances,
    make_weights,
)
from .estimate import (
    AlteResult,
    LatentEffectEstimator,
    bootstrap,
    dim_wsi,
    estimate_wsi,
    gmm_joint,
    ols_adjusted,
    stacked_regression,
)
from .structural import (
    FitResult,
    StructuralModel,
    compare_nested,
    fit,
    fit_multigroup,
    implied_covariance,
    latent_model,
    sur_model,
)
from .baselines import BaselineResult, equal_std_index, icw_index, pca_index, sur_fit
from .bridge import BridgeFunction, alte_with_bridges, solve_bridge_binary, solve_bridge_discrete
from .diagnose import SpecTestResult, rainbow_test, reset_test, scatter_smooth
from .simlab import DgpSpec, McReport, generate, run_mc
from .planner import DesignProblem, DesignSolution, forecast_variance, marginal_tables, optimize_budget
from .exceptions import AlteError, EstimationError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "ExperimentData", "MomentSummary", "ingest_csv", "moments",
    "ScalingEstimate", "lambda_combined", "lambda_measure_iv", "lambda_treatment_iv",
    "ErrorVarianceEstimate", "WeightedScaledIndex", "WeightScheme", "WsiOutcome",
    "build_wsi", "estimate_error_variances", "make_weights",
    "AlteResult", "LatentEffectEstimator", "bootstrap", "dim_wsi", "estimate_wsi",
    "gmm_joint", "ols_adjusted", "stacked_regression",
    "FitResult", "StructuralModel", "compare_nested", "fit", "fit_multigroup",
    "implied_covariance", "latent_model", "sur_model",
    "BaselineResult", "equal_std_index", "icw_index", "pca_index", "sur_fit",
    "BridgeFunction", "alte_with_bridges", "solve_bridge_binary", "solve_bridge_discrete",
    "SpecTestResult", "rainbow_test", "reset_test", "scatter_smooth",
    "DgpSpec", "McReport", "generate", "run_mc",
    "DesignProblem", "DesignSolution", "forecast_variance", "marginal_tables", "optimize_budget",
    "AlteError", "EstimationError", "ValidationError",
]
