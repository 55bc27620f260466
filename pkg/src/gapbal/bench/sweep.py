"""Strategy-grid execution: single-task references first, then the grid."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

from .config import ExperimentConfig
from .metrics import MetricReport
from .records import RunRecord
from .report import build_reports, stl_reference_vectors, write_summary
from .train import stl_reference_config, train_run

logger = logging.getLogger(__name__)


@dataclass
class SweepResult:
    out_dir: Path
    summary_path: Path
    reports: list[MetricReport]
    records: list[RunRecord]


def _label(strategy: str, aggregator: str | None) -> str:
    return f"{strategy}+{aggregator}" if aggregator else strategy


def run_sweep(config: ExperimentConfig, out_dir: str | Path) -> SweepResult:
    """Run every (strategy, seed) cell plus the per-task reference runs.

    Each seed's single-task runs come first so the grid runs can select
    models against the matching validation references; every record is
    written to ``out_dir`` and the per-strategy table to
    ``sweep_summary.csv`` in the same directory.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records: list[RunRecord] = []
    stl_index: dict[int, dict[int, RunRecord]] = {}

    for seed in config.seeds:
        for task in range(config.suite.n_tasks):
            rec = train_run(stl_reference_config(config, task), seed)
            rec.write(out / f"stl_task{task}_seed{seed}.csv")
            records.append(rec)
            stl_index.setdefault(seed, {})[task] = rec
            logger.info("stl task %d seed %d done (%.1fs)",
                        task, seed, rec.train_seconds())

    for strategy in config.sweep_strategies:
        cell = dataclasses.replace(
            config, strategy=strategy, use_si=None, task_subset=None)
        for seed in config.seeds:
            val_refs, _ = stl_reference_vectors(
                stl_index, seed, config.suite.n_tasks)
            rec = train_run(cell, seed, stl_val_refs=val_refs)
            rec.write(out / f"{_label(strategy, config.aggregator)}_seed{seed}.csv")
            records.append(rec)
            logger.info("%s seed %d done (%.1fs, status %s)",
                        strategy, seed, rec.train_seconds(), rec.status)

    order = [_label(s, config.aggregator) for s in config.sweep_strategies]
    reports = build_reports(records, order=order)
    summary = write_summary(
        out / "sweep_summary.csv", reports,
        meta={
            "seeds": list(config.seeds),
            "strategies": order,
            "epochs": config.epochs,
            "suite": dataclasses.asdict(config.suite),
        },
    )
    return SweepResult(out_dir=out, summary_path=summary,
                       reports=reports, records=records)
