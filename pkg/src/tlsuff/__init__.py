"""Transfer learning for high-dimensional logistic targets and a test of its sufficiency."""

from .glm_core import (
    FitDiagnostics,
    FitOptions,
    SourceDataset,
    SourceModel,
    TargetDataset,
    fit_binary_logistic,
    fit_multinomial_logistic,
)
from .mc_harness import ExperimentConfig, ExperimentResult, run_mse, run_power, run_size
from .simgen import GenSpec, GroundTruth
from .suff_test import SufficiencyResult, test_sufficiency
from .transfer import TransferFit, fit_transfer, make_features, oracle_fit

__version__ = "0.1.0"
