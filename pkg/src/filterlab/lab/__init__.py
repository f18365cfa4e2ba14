"""Command-line experiment harness."""

from .config import EXPERIMENTS, ExperimentConfig, load_config
from .experiments import RunRecord, run_experiment

__all__ = ["EXPERIMENTS", "ExperimentConfig", "load_config", "RunRecord", "run_experiment"]
