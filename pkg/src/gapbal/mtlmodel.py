"""Shared-trunk multi-head models and a synthetic multi-task benchmark suite.

The suite generates tasks over one shared input distribution whose targets
differ in output scale and in polynomial difficulty, so per-task losses sit
on very different scales and improve at different speeds. That is the
regime the loss balancers in this package are built for.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Mlp, Tape, Tensor
from .errors import ConfigError, ContractError, DomainError

logger = logging.getLogger(__name__)

LOSS_FLOOR = 1e-12

TASK_KINDS = ("regression", "classification")


class ClampCounter:
    """Counts loss values that had to be floored before the log transform."""

    def __init__(self) -> None:
        self.count = 0

    def bump(self, n: int = 1) -> None:
        self.count += n

    def reset(self) -> None:
        self.count = 0


clamp_counter = ClampCounter()


@dataclass
class TaskBatch:
    """One mini-batch: shared inputs plus one target array per task."""

    inputs: np.ndarray
    targets: list[np.ndarray]
    batch_index: int
    epoch_index: int

    def __post_init__(self) -> None:
        if self.batch_index < 1 or self.epoch_index < 1:
            raise ContractError(
                f"batch/epoch indices are 1-based, got {self.batch_index}/{self.epoch_index}"
            )
        b = self.inputs.shape[0]
        for k, t in enumerate(self.targets):
            if t.shape[0] != b:
                raise ContractError(
                    f"target {k} has batch dimension {t.shape[0]}, inputs have {b}"
                )

    @property
    def n_tasks(self) -> int:
        return len(self.targets)


class LossVector:
    """Per-task scalar losses, floored at LOSS_FLOOR so log is always safe.

    Holds the tape-attached scalars so callers can differentiate through
    any one of them; ``values`` gives the plain floats.
    """

    def __init__(self, tensors: list[Tensor]) -> None:
        if not tensors:
            raise ContractError("LossVector needs at least one loss")
        vals = np.array([t.item() for t in tensors], dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise DomainError(f"non-finite task loss in {vals}")
        if np.any(vals <= 0.0):
            raise DomainError(f"non-positive task loss in {vals} (clamp missed?)")
        self.tensors = tensors
        self.values = vals

    def __len__(self) -> int:
        return len(self.tensors)


class MultiTaskModel:
    """A shared trunk feeding one small head per task.

    Trunk parameters are the task-shared set; each head owns a disjoint
    task-specific set. ``forward`` returns one prediction tensor per task.
    """

    def __init__(self, trunk: Mlp, heads: list[Mlp], task_kinds: list[str]) -> None:
        if len(heads) < 2:
            raise ConfigError(f"need at least 2 tasks, got {len(heads)}")
        if len(task_kinds) != len(heads):
            raise ConfigError("one task kind per head required")
        for kind in task_kinds:
            if kind not in TASK_KINDS:
                raise ConfigError(
                    f"unknown task kind {kind!r}; valid: {', '.join(TASK_KINDS)}"
                )
        self.trunk = trunk
        self.heads = heads
        self.task_kinds = list(task_kinds)
        self.n = len(heads)

    def shared_parameters(self) -> list[Tensor]:
        return self.trunk.parameters()

    def head_parameters(self, i: int) -> list[Tensor]:
        return self.heads[i].parameters()

    def all_parameters(self) -> list[Tensor]:
        params = self.shared_parameters()
        for i in range(self.n):
            params.extend(self.head_parameters(i))
        return params

    def forward(self, x: Tensor) -> list[Tensor]:
        rep = self.trunk(x)
        return [head(rep) for head in self.heads]

    def infer(self, x: np.ndarray) -> list[np.ndarray]:
        rep = self.trunk.infer(x)
        return [head.infer(rep) for head in self.heads]


def task_losses(model: MultiTaskModel, batch: TaskBatch) -> LossVector:
    """Per-task loss scalars on the active tape, floored at LOSS_FLOOR.

    Regression tasks use mean squared error, classification tasks use
    softmax cross-entropy over integer labels.
    """
    if model.n != batch.n_tasks:
        raise ContractError(
            f"model has {model.n} tasks but batch has {batch.n_tasks}"
        )
    preds = model.forward(Tensor(batch.inputs))
    losses: list[Tensor] = []
    clamped = 0
    for kind, pred, target in zip(model.task_kinds, preds, batch.targets):
        if kind == "regression":
            raw = dc.mse_loss(pred, target)
        else:
            raw = dc.cross_entropy(pred, target)
        if raw.item() < LOSS_FLOOR:
            clamped += 1
        losses.append(dc.clamp_min(raw, LOSS_FLOOR))
    if clamped:
        clamp_counter.bump(clamped)
        logger.warning(
            "floored %d task loss(es) at %g (total %d so far)",
            clamped, LOSS_FLOOR, clamp_counter.count,
        )
    return LossVector(losses)


def hermite(degree: int, t: np.ndarray) -> np.ndarray:
    """Probabilist's Hermite polynomial, zero-mean under a standard normal."""
    if degree == 1:
        return t
    if degree == 2:
        return t * t - 1.0
    if degree == 3:
        return t * t * t - 3.0 * t
    raise ConfigError(f"difficulty must be 1, 2 or 3, got {degree}")


@dataclass
class SuiteSpec:
    """Configuration for one synthetic multi-task dataset."""

    n_tasks: int = 3
    in_dim: int = 10
    n_samples: int = 2000
    batch_size: int = 64
    scales: list[float] = field(default_factory=lambda: [1.0, 10.0, 100.0])
    difficulties: list[int] = field(default_factory=lambda: [1, 2, 3])
    noises: list[float] = field(default_factory=lambda: [0.05, 0.05, 0.05])
    task_kinds: list[str] = field(default_factory=lambda: ["regression"] * 3)
    n_classes: int = 3
    trunk_widths: list[int] = field(default_factory=lambda: [64, 64])
    head_width: int = 32

    def validate(self) -> None:
        if self.n_tasks < 2:
            raise ConfigError(f"suite needs n_tasks >= 2, got {self.n_tasks}")
        for name, seq in (
            ("scales", self.scales),
            ("difficulties", self.difficulties),
            ("noises", self.noises),
            ("task_kinds", self.task_kinds),
        ):
            if len(seq) != self.n_tasks:
                raise ConfigError(
                    f"{name} has {len(seq)} entries for {self.n_tasks} tasks"
                )
        if any(s <= 0.0 for s in self.scales):
            raise ConfigError(f"scales must be positive, got {self.scales}")
        if any(nz < 0.0 for nz in self.noises):
            raise ConfigError(f"noise levels must be non-negative, got {self.noises}")
        for kind in self.task_kinds:
            if kind not in TASK_KINDS:
                raise ConfigError(
                    f"unknown task kind {kind!r}; valid: {', '.join(TASK_KINDS)}"
                )
        if self.batch_size < 1 or self.n_samples < 20:
            raise ConfigError("batch_size >= 1 and n_samples >= 20 required")


class SyntheticSuite:
    """Deterministic multi-task dataset with 70/15/15 train/val/test splits.

    Inputs are standard normal; a shared random rotation mixes them into
    latent coordinates, and task k's clean target is
    scale_k * f_k(latent) with f_k a normalized degree-d_k Hermite sum.
    Every f_k has zero mean and unit variance under the input law, so the
    clean target variance of task k is exactly scale_k**2. Instances are
    immutable after construction.
    """

    TRAIN_FRAC = 0.70
    VAL_FRAC = 0.15

    def __init__(self, spec: SuiteSpec, seed: int) -> None:
        spec.validate()
        self.spec = spec
        self.seed = seed
        root = np.random.SeedSequence(seed)
        data_ss, model_ss, batch_ss = root.spawn(3)
        self._model_seed = model_ss
        self._batch_seed = batch_ss

        rng = np.random.default_rng(data_ss)
        n, p = spec.n_samples, spec.in_dim
        x = rng.normal(size=(n, p))
        raw = rng.normal(size=(p, p))
        q, r = np.linalg.qr(raw)
        q = q * np.sign(np.diag(r))  # canonical orthogonal factor
        z = x @ q

        self.inputs = x
        self.clean_targets: list[np.ndarray] = []
        self.targets: list[np.ndarray] = []
        for k in range(spec.n_tasks):
            d = spec.difficulties[k]
            f = hermite(d, z).sum(axis=1) / math.sqrt(p * math.factorial(d))
            clean = spec.scales[k] * f.reshape(-1, 1)
            if spec.task_kinds[k] == "classification":
                edges = np.quantile(f, np.linspace(0, 1, spec.n_classes + 1)[1:-1])
                labels = np.digitize(f, edges).reshape(-1, 1)
                self.clean_targets.append(labels.astype(np.int64))
                self.targets.append(labels.astype(np.int64))
            else:
                noise = spec.noises[k] * spec.scales[k] * rng.normal(size=(n, 1))
                self.clean_targets.append(clean)
                self.targets.append(clean + noise)

        n_train = int(round(n * self.TRAIN_FRAC))
        n_val = int(round(n * self.VAL_FRAC))
        self._bounds = (n_train, n_train + n_val, n)

    @property
    def n_tasks(self) -> int:
        return self.spec.n_tasks

    def split_slice(self, split: str) -> slice:
        t, v, n = self._bounds
        if split == "train":
            return slice(0, t)
        if split == "val":
            return slice(t, v)
        if split == "test":
            return slice(v, n)
        raise ConfigError(f"unknown split {split!r}; valid: train, val, test")

    def split_arrays(self, split: str) -> tuple[np.ndarray, list[np.ndarray]]:
        s = self.split_slice(split)
        return self.inputs[s], [t[s] for t in self.targets]

    def batches_per_epoch(self) -> int:
        s = self.split_slice("train")
        return (s.stop - s.start) // self.spec.batch_size

    def train_batches(self, epoch: int) -> list[TaskBatch]:
        """Shuffled equal-size batches for one epoch; remainder is dropped.

        The shuffle depends only on (suite seed, epoch), so two runs over
        the same suite see identical batch streams.
        """
        if epoch < 1:
            raise ContractError(f"epochs are 1-based, got {epoch}")
        x, ts = self.split_arrays("train")
        rng = np.random.default_rng([self._batch_seed.entropy, epoch])
        order = rng.permutation(x.shape[0])
        bs = self.spec.batch_size
        batches = []
        for b in range(self.batches_per_epoch()):
            idx = order[b * bs : (b + 1) * bs]
            batches.append(
                TaskBatch(
                    inputs=x[idx],
                    targets=[t[idx] for t in ts],
                    batch_index=b + 1,
                    epoch_index=epoch,
                )
            )
        return batches

    def eval_batch(self, split: str) -> TaskBatch:
        x, ts = self.split_arrays(split)
        return TaskBatch(inputs=x, targets=ts, batch_index=1, epoch_index=1)

    def make_model(self, seed: int | None = None, task_subset: list[int] | None = None):
        """Build a fresh model for this suite (or a subset of its tasks).

        With ``task_subset`` of length one the result is a single-task
        model sharing the trunk/head architecture, which is what the
        single-task reference runs use. Single-entry subsets relax the
        two-task minimum.
        """
        spec = self.spec
        if seed is None:
            rng = np.random.default_rng(self._model_seed)
        else:
            rng = np.random.default_rng([self._model_seed.entropy, seed])
        tasks = list(range(spec.n_tasks)) if task_subset is None else list(task_subset)
        trunk = Mlp([spec.in_dim] + list(spec.trunk_widths), rng)
        rep = spec.trunk_widths[-1]
        heads = []
        kinds = []
        for k in tasks:
            out = spec.n_classes if spec.task_kinds[k] == "classification" else 1
            heads.append(Mlp([rep, spec.head_width, out], rng))
            kinds.append(spec.task_kinds[k])
        if len(tasks) == 1:
            model = MultiTaskModel.__new__(MultiTaskModel)
            model.trunk = trunk
            model.heads = heads
            model.task_kinds = kinds
            model.n = 1
            return model
        return MultiTaskModel(trunk, heads, kinds)

    def subset_batch(self, batch: TaskBatch, tasks: list[int]) -> TaskBatch:
        return TaskBatch(
            inputs=batch.inputs,
            targets=[batch.targets[k] for k in tasks],
            batch_index=batch.batch_index,
            epoch_index=batch.epoch_index,
        )


def make_synthetic_suite(spec: SuiteSpec, seed: int) -> SyntheticSuite:
    """Construct the dataset for ``spec``; same spec and seed → same bits."""
    return SyntheticSuite(spec, seed)
