"""Probe-level models for oligonucleotide arrays.

Observed intensities are modelled as optical noise plus lognormal
nonspecific and specific binding. The package provides the moment
calculus of that model, plug-in estimation of its nuisance parameters,
detection calls, gene-level fold changes with sandwich standard errors,
a two-colour tag screen and a simulator with known ground truth.
"""

__version__ = "0.1.0"

from .affinity import AffinityModel, fit_affinity, predict_affinity
from .background import (BackgroundFit, estimate_nu, estimate_optical, fit_background,
                         fit_plugins, fit_signal_params)
from .detect import DetectionResult, mas5_detect, model_detect
from .errors import DataError, NumericalError, ProbeLevelError
from .evaluation import RocTable, ma_pa_table, roc
from .gee import GeneFitResult, de_test, fit_dataset, no_background_baseline, solve_gee
from .model import ModelParams, ProbeLevelDataset, expected_intensity, variance_profile
from .sim import SimConfig, default_latin_square, generate, generate_tags

__all__ = [
    "AffinityModel", "BackgroundFit", "DataError", "DetectionResult", "GeneFitResult",
    "ModelParams", "NumericalError", "ProbeLevelDataset", "ProbeLevelError", "RocTable",
    "SimConfig", "de_test", "default_latin_square", "estimate_nu", "estimate_optical",
    "expected_intensity", "fit_affinity", "fit_background", "fit_dataset", "fit_plugins",
    "fit_signal_params", "generate", "generate_tags", "ma_pa_table", "mas5_detect",
    "model_detect", "no_background_baseline", "predict_affinity", "roc", "solve_gee",
    "variance_profile",
]
