"""Multivariate negative binomial regression for clustered count data."""
__version__ = "0.1.0"

from .datasets import load_seizures
from .errors import *  # noqa: F401,F403
from .estimation import FitOptions, FitResult, fit, poisson_fit, refit_excluding
from .estimator import MNBRegressor
from .influence import (
    curvature,
    delta_matrix,
    global_influence,
    local_influence,
    prd,
)
from .io import ModelFormulaLite, ingest_csv
from .model import LongitudinalDataset, ThetaParams, log_likelihood, mnb_log_pmf
from .residuals import quantile_residuals, simulated_envelope
from .simulation import StudyConfig, monte_carlo

__all__ = [
    "FitOptions", "FitResult", "LongitudinalDataset", "MNBRegressor",
    "ModelFormulaLite", "StudyConfig", "ThetaParams", "curvature", "delta_matrix",
    "fit", "global_influence", "ingest_csv", "load_seizures", "local_influence", "log_likelihood",
    "mnb_log_pmf", "monte_carlo", "poisson_fit", "prd", "quantile_residuals",
    "refit_excluding", "simulated_envelope",
]
