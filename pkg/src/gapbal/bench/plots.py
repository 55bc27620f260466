"""Static SVG loss-curve plots from run records."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import ContractError
from .records import RunRecord


def plot_loss_curves(records: list[RunRecord], path: str | Path) -> Path:
    """Mean per-task train-loss curves over seeds, on a log scale.

    All records must belong to one strategy group; curves are truncated
    to the shortest run so aborted seeds cannot skew the mean.
    """
    from matplotlib.figure import Figure

    if not records:
        raise ContractError("need at least one record to plot")
    labels = {r.label for r in records}
    if len(labels) > 1:
        raise ContractError(f"records mix strategies {sorted(labels)}")
    label = labels.pop()
    depth = min(len(r.epoch_rows) for r in records)
    if depth == 0:
        raise ContractError(f"no completed epochs to plot for {label}")
    n = records[0].n_tasks
    curves = np.array([
        [r.epoch_rows[e].train_losses for e in range(depth)] for r in records
    ])  # (runs, epochs, tasks)
    mean = curves.mean(axis=0)

    fig = Figure(figsize=(7.0, 4.5))
    ax = fig.add_subplot(111)
    xs = np.arange(1, depth + 1)
    for k in range(n):
        ax.plot(xs, mean[:, k], label=f"task {k}")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean train loss")
    ax.set_title(f"{label} ({len(records)} run{'s' if len(records) > 1 else ''})")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    path = Path(path)
    fig.savefig(path, format="svg", bbox_inches="tight")
    return path
