"""Experiment orchestration: configs, training, Monte-Carlo sweeps, CSV output, CLI."""

from .config import ExperimentConfig, load_config, preset
from .metrics import nmse, rmse_deg
from .pipeline import run_sweep, train_pipeline
from .results import ResultRow, ResultTable, emit_csv, read_csv

__all__ = [
    "ExperimentConfig", "load_config", "preset", "nmse", "rmse_deg", "run_sweep",
    "train_pipeline", "ResultRow", "ResultTable", "emit_csv", "read_csv",
]
