"""Benchmark harness: configs, training runs, metrics, records, CLI."""

from .config import (
    ExperimentConfig,
    SacSettings,
    config_from_dict,
    load_config,
    valid_aggregator_names,
    valid_strategy_names,
)
from .metrics import MetricReport, compute_T, compute_delta_m
from .records import BatchRow, EpochRow, RunRecord
from .report import build_reports, format_table, load_records, write_summary
from .sweep import SweepResult, run_sweep
from .train import build_strategy, evaluate, stl_reference_config, train_run

__all__ = [
    "BatchRow",
    "EpochRow",
    "ExperimentConfig",
    "MetricReport",
    "RunRecord",
    "SacSettings",
    "SweepResult",
    "build_reports",
    "build_strategy",
    "compute_T",
    "compute_delta_m",
    "config_from_dict",
    "evaluate",
    "format_table",
    "load_config",
    "load_records",
    "run_sweep",
    "stl_reference_config",
    "train_run",
    "valid_aggregator_names",
    "valid_strategy_names",
    "write_summary",
]
