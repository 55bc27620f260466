"""Aggregation of run records into per-strategy metric tables."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ContractError
from .metrics import MetricReport, compute_T, compute_delta_m
from .records import MAGIC, RunRecord

logger = logging.getLogger(__name__)

SUMMARY_HEADER = "strategy,delta_m_mean,delta_m_std,T_mean,T_std,seconds_mean"
SUMMARY_MAGIC = "# gapbal-sweep v1"


def load_records(directory: str | Path) -> list[RunRecord]:
    """Parse every run record in a directory (non-records are skipped)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"record directory not found: {directory}")
    records = []
    for path in sorted(directory.glob("*.csv")):
        with path.open() as fh:
            if fh.readline().rstrip("\n") != MAGIC:
                continue
        records.append(RunRecord.parse(path))
    return records


def _split_records(records):
    stl: dict[int, dict[int, RunRecord]] = {}
    methods: dict[str, dict[int, RunRecord]] = {}
    for rec in records:
        if rec.status != "ok" or rec.test_losses is None:
            logger.warning("skipping %s record for seed %d (%s)",
                           rec.label, rec.seed, rec.status)
            continue
        if rec.task_subset:
            if len(rec.task_subset) == 1:
                stl.setdefault(rec.seed, {})[rec.task_subset[0]] = rec
            continue
        group = methods.setdefault(rec.label, {})
        if rec.seed in group:
            raise ContractError(
                f"duplicate record for {rec.label} seed {rec.seed}")
        group[rec.seed] = rec
    return stl, methods


def stl_reference_vectors(stl: dict[int, dict[int, RunRecord]], seed: int,
                          n_tasks: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-task single-task (val, test) metrics for one seed."""
    per_task = stl.get(seed, {})
    missing = [k for k in range(n_tasks) if k not in per_task]
    if missing:
        raise ConfigError(
            f"missing single-task reference runs for seed {seed}, tasks {missing}")
    vals, tests = [], []
    for k in range(n_tasks):
        rec = per_task[k]
        sel = rec.epoch_rows[rec.selected_epoch - 1]
        vals.append(sel.val_losses[0])
        tests.append(rec.test_losses[0])
    return np.array(vals), np.array(tests)


def build_reports(records: list[RunRecord],
                  order: list[str] | None = None) -> list[MetricReport]:
    """Per-strategy aggregates over seeds, with single-task references.

    Every method record's seed must have one single-task record per task
    in the same collection; the T column compares total train seconds to
    the plain equal-weighting run of the same seed when one exists.
    """
    stl, methods = _split_records(records)
    if not methods:
        raise ConfigError("no completed multi-task run records to aggregate")
    ew_seconds = {seed: rec.train_seconds()
                  for seed, rec in methods.get("ew", {}).items()}
    labels = list(order) if order is not None else sorted(
        methods, key=lambda s: (s != "ew", s))
    reports = []
    for label in labels:
        group = methods.get(label)
        if not group:
            continue
        deltas, times, ratios = [], [], []
        task_metrics, stl_tests = [], []
        for seed, rec in sorted(group.items()):
            _, test_ref = stl_reference_vectors(stl, seed, rec.n_tasks)
            deltas.append(compute_delta_m(rec.test_losses, test_ref))
            times.append(rec.train_seconds())
            task_metrics.append(rec.test_losses)
            stl_tests.append(test_ref)
            if seed in ew_seconds:
                ratios.append(compute_T(times[-1], ew_seconds[seed]))
        deltas = np.array(deltas)
        spread = float(np.std(deltas, ddof=1)) if len(deltas) > 1 else 0.0
        reports.append(MetricReport(
            label=label,
            n_runs=len(group),
            delta_m_mean=float(np.mean(deltas)),
            delta_m_std=spread,
            t_mean=float(np.mean(ratios)) if ratios else None,
            t_std=(float(np.std(ratios, ddof=1))
                   if len(ratios) > 1 else (0.0 if ratios else None)),
            seconds_mean=float(np.mean(times)),
            task_metrics=tuple(np.mean(task_metrics, axis=0)),
            stl_metrics=tuple(np.mean(stl_tests, axis=0)),
            ew_seconds=(float(np.mean(list(ew_seconds.values())))
                        if ew_seconds else None),
        ))
    return reports


def _cell(value) -> str:
    return "" if value is None else repr(float(value))


def write_summary(path: str | Path, reports: list[MetricReport],
                  meta: dict | None = None) -> Path:
    """Write the per-strategy table as a small CSV with '#' meta lines."""
    import json

    path = Path(path)
    lines = [SUMMARY_MAGIC]
    for key, value in (meta or {}).items():
        lines.append(f"# {key}={json.dumps(value)}")
    lines.append(SUMMARY_HEADER)
    for r in reports:
        lines.append(",".join([
            r.label,
            _cell(r.delta_m_mean), _cell(r.delta_m_std),
            _cell(r.t_mean), _cell(r.t_std),
            _cell(r.seconds_mean),
        ]))
    path.write_text("\n".join(lines) + "\n")
    return path


def format_table(reports: list[MetricReport]) -> str:
    """Human-readable mean ± std table, one row per strategy."""
    header = f"{'strategy':<16} {'Δm% (mean ± std)':>22} {'T':>14} {'runs':>5}"
    rows = [header, "-" * len(header)]
    for r in reports:
        dm = f"{r.delta_m_mean:+.3f} ± {r.delta_m_std:.3f}"
        t = "-" if r.t_mean is None else f"{r.t_mean:.3f}"
        rows.append(f"{r.label:<16} {dm:>22} {t:>14} {r.n_runs:>5}")
    return "\n".join(rows)
