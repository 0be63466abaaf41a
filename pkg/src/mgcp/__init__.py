"""Transfer-learning Gaussian process regression with source selection.

A target output is modelled jointly with several source outputs through
convolution-process covariances; an L1-type penalty on the transfer scales
selects which sources actually inform the target, and a marginalize-expand
adaptation step aligns sources whose input features disagree with the
target's.
"""

__version__ = "0.1.0"

from .covblock import (
    CovarianceBundle,
    OutputData,
    PredictiveDistribution,
    assemble_covariance,
    log_likelihood,
    log_likelihood_dense,
    log_likelihood_schur,
    marginalize_sources,
    predict,
)
from .dame import DameConfig, DomainSpec, NadarayaWatson, adapt_source
from .estimators import MGCPRegressor
from .exceptions import (
    BandwidthError,
    CombinationError,
    ConfigError,
    DataError,
    IndefiniteCovarianceError,
    MgcpError,
    OptimizationError,
)
from .kernels import Hyperparameters, KernelParams
from .train import FitResult, TrainConfig, fit, predict_fit, select_gamma

__all__ = [
    "__version__",
    "MGCPRegressor",
    "OutputData",
    "KernelParams",
    "Hyperparameters",
    "CovarianceBundle",
    "PredictiveDistribution",
    "TrainConfig",
    "FitResult",
    "DomainSpec",
    "DameConfig",
    "NadarayaWatson",
    "fit",
    "predict_fit",
    "select_gamma",
    "predict",
    "assemble_covariance",
    "log_likelihood",
    "log_likelihood_schur",
    "log_likelihood_dense",
    "marginalize_sources",
    "adapt_source",
    "MgcpError",
    "ConfigError",
    "DataError",
    "IndefiniteCovarianceError",
    "OptimizationError",
    "BandwidthError",
    "CombinationError",
]
