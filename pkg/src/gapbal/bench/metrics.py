"""Benchmark metrics: relative performance drop and relative training time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractError, DomainError


def compute_delta_m(method_metrics, stl_metrics, directions=None,
                    names=None) -> float:
    """Average signed percent drop of a method against per-task references.

    Each task contributes (method - reference) / reference, negated for
    higher-is-better metrics, so positive means worse than the reference.
    The result is the mean over tasks, in percent.
    """
    m = np.asarray(method_metrics, dtype=np.float64)
    s = np.asarray(stl_metrics, dtype=np.float64)
    if m.ndim != 1 or m.shape != s.shape or m.size < 1:
        raise ContractError(
            f"metric vectors must be equal-length 1-d, got {m.shape} vs {s.shape}"
        )
    k = m.size
    if directions is None:
        directions = [False] * k
    if len(directions) != k:
        raise ContractError(f"{len(directions)} direction flags for {k} metrics")
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(s))):
        raise DomainError("metric vectors must be finite")
    for i, v in enumerate(s):
        if v == 0.0:
            label = names[i] if names is not None else f"task{i}"
            raise DomainError(
                f"reference metric {label!r} is zero; relative drop is undefined"
            )
    signs = np.where(np.asarray(directions, dtype=bool), -1.0, 1.0)
    return float(100.0 * np.mean(signs * (m - s) / s))


def compute_T(method_time: float, ew_time: float | None) -> float:
    """Training time of a method relative to the equal-weighting run."""
    if ew_time is None:
        raise ConfigError("no equal-weighting reference time available")
    if not (method_time > 0.0 and ew_time > 0.0):
        raise ContractError(
            f"times must be positive, got {method_time} and {ew_time}"
        )
    return float(method_time) / float(ew_time)


@dataclass
class MetricReport:
    """Aggregate metrics for one strategy over its seeds.

    ``task_metrics`` are mean per-task test losses; ``stl_metrics`` carry
    the matching single-task references and ``ew_seconds`` the mean
    equal-weighting wall time the T column is measured against.
    """

    label: str
    n_runs: int
    delta_m_mean: float
    delta_m_std: float
    t_mean: float | None
    t_std: float | None
    seconds_mean: float
    task_metrics: tuple[float, ...]
    stl_metrics: tuple[float, ...]
    ew_seconds: float | None
