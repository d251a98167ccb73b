"""Fréchet regression and Wasserstein F-tests for SPD matrix responses under the Bures-Wasserstein metric."""

__version__ = "0.1.0"

from .config import DEFAULT, NumericConfig
from .errors import BWFError
from .geometry import SymOperator, bw_distance, dt_map, dt_operator, ot_map, sqrtm, w2_gradient
from .regression import (
    Dataset,
    FitConfig,
    MomentEstimates,
    RegressionFit,
    barycenter,
    empirical_moments,
    fit,
    fit_many,
    objective,
    weights,
)
from .inference import (
    CltEstimate,
    TestResult,
    clt_covariance,
    confidence_interval,
    estimated_covariance_test,
    null_eigenvalues,
    run_test,
    weighted_chisq_quantile,
)
