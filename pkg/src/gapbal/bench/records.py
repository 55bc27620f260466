"""Line-oriented run records that round-trip exactly through disk.

One file per training run: json-encoded metadata on '#' header lines,
then typed CSV rows (B = per-batch, E = per-epoch, T = final test).
Floats are written with repr so parse(write(r)) == r holds bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ContractError

MAGIC = "# gapbal-run v1"

_META_FIELDS = (
    "strategy", "aggregator", "use_si", "seed", "epochs", "batch_size",
    "n_tasks", "task_subset", "lr", "lr_decay_every", "lr_decay_factor",
    "status", "abort_reason", "selected_epoch", "selection_reference",
    "created_unix",
)


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


@dataclass
class BatchRow:
    """One optimizer step: losses and weights per task, reward if any."""

    epoch: int
    batch: int
    losses: tuple[float, ...]
    weights: tuple[float, ...]
    reward: float | None
    source: str


@dataclass
class EpochRow:
    """One epoch: mean train losses, validation losses, lr, wall seconds."""

    epoch: int
    train_losses: tuple[float, ...]
    val_losses: tuple[float, ...]
    lr: float
    wall: float
    val_delta_m: float


@dataclass
class RunRecord:
    """Everything one training run produced, in replayable form."""

    strategy: str
    aggregator: str
    use_si: bool
    seed: int
    epochs: int
    batch_size: int
    n_tasks: int
    task_subset: tuple[int, ...]
    lr: float
    lr_decay_every: int
    lr_decay_factor: float
    status: str
    abort_reason: str
    selected_epoch: int
    selection_reference: tuple[float, ...]
    created_unix: float
    batch_rows: list[BatchRow] = field(default_factory=list)
    epoch_rows: list[EpochRow] = field(default_factory=list)
    test_losses: tuple[float, ...] | None = None

    @property
    def label(self) -> str:
        """Grouping key for reports: strategy plus any aggregator."""
        if self.task_subset:
            return f"stl_task{'_'.join(map(str, self.task_subset))}"
        return f"{self.strategy}+{self.aggregator}" if self.aggregator else self.strategy

    def train_seconds(self) -> float:
        return float(sum(r.wall for r in self.epoch_rows))

    def validate(self) -> None:
        keys = [(r.epoch, r.batch) for r in self.batch_rows]
        if keys != sorted(set(keys)):
            raise ContractError("batch rows must be strictly ordered by (epoch, batch)")
        epochs = [r.epoch for r in self.epoch_rows]
        if epochs != sorted(set(epochs)):
            raise ContractError("epoch rows must be strictly ordered by epoch")
        if any(r.wall < 0.0 for r in self.epoch_rows):
            raise ContractError("epoch wall times must be non-negative")

    def same_trajectory(self, other: "RunRecord") -> bool:
        """Equality that ignores wall-clock measurements and timestamps."""
        strip = lambda r: dataclasses.replace(
            r,
            created_unix=0.0,
            epoch_rows=[dataclasses.replace(e, wall=0.0) for e in r.epoch_rows],
        )
        return strip(self) == strip(other)

    def write(self, path: str | Path) -> Path:
        self.validate()
        path = Path(path)
        lines = [MAGIC]
        for name in _META_FIELDS:
            value = getattr(self, name)
            if isinstance(value, tuple):
                value = list(value)
            lines.append(f"# {name}={json.dumps(value)}")
        for r in self.batch_rows:
            cells = ["B", str(r.epoch), str(r.batch)]
            cells += [_fmt(v) for v in r.losses]
            cells += [_fmt(v) for v in r.weights]
            cells += [_fmt(r.reward), r.source]
            lines.append(",".join(cells))
        for r in self.epoch_rows:
            cells = ["E", str(r.epoch)]
            cells += [_fmt(v) for v in r.train_losses]
            cells += [_fmt(v) for v in r.val_losses]
            cells += [_fmt(r.lr), _fmt(r.wall), _fmt(r.val_delta_m)]
            lines.append(",".join(cells))
        if self.test_losses is not None:
            lines.append(",".join(["T"] + [_fmt(v) for v in self.test_losses]))
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def parse(cls, path: str | Path) -> "RunRecord":
        path = Path(path)
        lines = path.read_text().splitlines()
        if not lines or lines[0] != MAGIC:
            raise ContractError(f"not a run record: {path}")
        meta = {}
        body_start = 1
        for i, line in enumerate(lines[1:], start=1):
            if not line.startswith("# "):
                body_start = i
                break
            key, _, raw = line[2:].partition("=")
            meta[key] = json.loads(raw)
            body_start = i + 1
        missing = [k for k in _META_FIELDS if k not in meta]
        if missing:
            raise ContractError(f"run record {path} is missing meta keys {missing}")
        n = meta["n_tasks"]
        rec = cls(
            strategy=meta["strategy"],
            aggregator=meta["aggregator"],
            use_si=meta["use_si"],
            seed=meta["seed"],
            epochs=meta["epochs"],
            batch_size=meta["batch_size"],
            n_tasks=n,
            task_subset=tuple(meta["task_subset"]),
            lr=meta["lr"],
            lr_decay_every=meta["lr_decay_every"],
            lr_decay_factor=meta["lr_decay_factor"],
            status=meta["status"],
            abort_reason=meta["abort_reason"],
            selected_epoch=meta["selected_epoch"],
            selection_reference=tuple(meta["selection_reference"]),
            created_unix=meta["created_unix"],
        )
        for line in lines[body_start:]:
            if not line:
                continue
            cells = line.split(",")
            kind = cells[0]
            if kind == "B":
                want = 2 * n + 5
                if len(cells) != want:
                    raise ContractError(
                        f"batch row has {len(cells)} cells, expected {want}: {line!r}"
                    )
                rec.batch_rows.append(BatchRow(
                    epoch=int(cells[1]),
                    batch=int(cells[2]),
                    losses=tuple(float(c) for c in cells[3:3 + n]),
                    weights=tuple(float(c) for c in cells[3 + n:3 + 2 * n]),
                    reward=None if cells[3 + 2 * n] == "" else float(cells[3 + 2 * n]),
                    source=cells[4 + 2 * n],
                ))
            elif kind == "E":
                want = 2 * n + 5
                if len(cells) != want:
                    raise ContractError(
                        f"epoch row has {len(cells)} cells, expected {want}: {line!r}"
                    )
                rec.epoch_rows.append(EpochRow(
                    epoch=int(cells[1]),
                    train_losses=tuple(float(c) for c in cells[2:2 + n]),
                    val_losses=tuple(float(c) for c in cells[2 + n:2 + 2 * n]),
                    lr=float(cells[2 + 2 * n]),
                    wall=float(cells[3 + 2 * n]),
                    val_delta_m=float(cells[4 + 2 * n]),
                ))
            elif kind == "T":
                rec.test_losses = tuple(float(c) for c in cells[1:])
            else:
                raise ContractError(f"unknown row kind {kind!r} in {path}")
        rec.validate()
        return rec
