"""Synthetic data, cross-validation protocol and reports."""

from .config import ExperimentConfig, MODEL_NAMES
from .cv import FoldPlan, make_folds, reconstruction_sweep, run_experiment, run_fold
from .report import CVReport, write_report
from .synthetic import SCENARIOS, SyntheticConfig, generate, generate_with_latents, scenario_config

__all__ = [
    "ExperimentConfig", "MODEL_NAMES", "FoldPlan", "make_folds", "reconstruction_sweep",
    "run_experiment", "run_fold", "CVReport", "write_report", "SCENARIOS", "SyntheticConfig",
    "generate", "generate_with_latents", "scenario_config",
]
