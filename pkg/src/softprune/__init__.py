"""Continual-learning toolkit built around entropy-saliency soft pruning."""

from .config import ExperimentConfig, validate_config, validate_config_data
from .runner import RunRecord, analyze_run, build_tasks, run_sequence, strategy_step, sweep

__all__ = [
    "ExperimentConfig",
    "RunRecord",
    "analyze_run",
    "build_tasks",
    "run_sequence",
    "strategy_step",
    "sweep",
    "validate_config",
    "validate_config_data",
]

__version__ = "0.1.0"
