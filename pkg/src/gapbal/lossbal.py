"""Loss-balancing strategies and the scale-invariant total-loss objective.

Two total-loss assemblies live here: the classic weighted sum of task
losses, and the scale-invariant form that sums weighted log-losses so a
task's loss magnitude cannot dominate the gradient. Strategies produce
per-batch weight vectors; most are constrained to positive entries that
sum to the task count.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ConfigError, ContractError, DomainError, StateError
from .mtlmodel import LossVector

WEIGHT_SUM_TOL = 1e-9

DWA_TEMPERATURE = 2.0


def stable_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x))
    return e / e.sum()


@dataclass
class WeightDecision:
    """Per-task weights for one batch.

    ``lam`` is the numeric weight vector. Strategies whose weights are
    themselves trainable (UW) also attach per-task scalar tensors plus an
    additive regularizer so gradients reach their parameters; those are
    exempt from the sum-to-n constraint.
    """

    lam: np.ndarray
    constrained: bool = True
    lam_tensors: list[Tensor] | None = None
    extra: Tensor | None = None

    def __post_init__(self) -> None:
        self.lam = np.asarray(self.lam, dtype=np.float64)
        if np.any(self.lam <= 0.0) or not np.all(np.isfinite(self.lam)):
            raise DomainError(f"weights must be positive and finite, got {self.lam}")
        n = self.lam.size
        if self.constrained and abs(self.lam.sum() - n) > WEIGHT_SUM_TOL:
            raise DomainError(
                f"constrained weights must sum to {n}, got {self.lam.sum()!r}"
            )
        if self.lam_tensors is not None and len(self.lam_tensors) != n:
            raise ContractError("one weight tensor per task required")

    @property
    def n(self) -> int:
        return self.lam.size


class BaselineLosses:
    """Per-task average losses over the second epoch, frozen once captured."""

    def __init__(self) -> None:
        self.l_base: np.ndarray | None = None
        self.captured = False


def capture_l_base(
    base: BaselineLosses, epoch_batch_losses: np.ndarray, epoch: int
) -> BaselineLosses:
    """Freeze ``base`` to the per-task mean of one epoch's batch losses.

    ``epoch_batch_losses`` is (batches, tasks). The caller invokes this
    exactly once, on the last batch of epoch 2, with every batch of that
    epoch already recorded (the current one included).
    """
    if base.captured:
        raise StateError("baseline losses already captured")
    if epoch != 2:
        raise ContractError(f"baseline capture happens at epoch 2, got epoch {epoch}")
    arr = np.asarray(epoch_batch_losses, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ContractError(f"need a (batches, tasks) loss record, got shape {arr.shape}")
    mean = arr.mean(axis=0)
    if np.any(mean <= 0.0) or not np.all(np.isfinite(mean)):
        raise DomainError(f"baseline losses must be positive and finite, got {mean}")
    mean.setflags(write=False)
    base.l_base = mean
    base.captured = True
    return base


def total_loss_si(losses: LossVector, weights: WeightDecision) -> Tensor:
    """Scale-invariant objective: sum of lam_i * log(L_i), on the tape."""
    if len(losses) != weights.n:
        raise ContractError(f"{len(losses)} losses vs {weights.n} weights")
    total: Tensor | None = None
    for i, lt in enumerate(losses.tensors):
        logged = dc.log(lt)
        if weights.lam_tensors is not None:
            term = dc.mul(logged, weights.lam_tensors[i])
        else:
            term = dc.mul(logged, float(weights.lam[i]))
        total = term if total is None else dc.add(total, term)
    if weights.extra is not None:
        total = dc.add(total, weights.extra)
    return total


def total_loss_weighted_sum(losses: LossVector, weights: WeightDecision) -> Tensor:
    """Legacy objective: sum of lam_i * L_i, plus any strategy regularizer."""
    if len(losses) != weights.n:
        raise ContractError(f"{len(losses)} losses vs {weights.n} weights")
    total: Tensor | None = None
    for i, lt in enumerate(losses.tensors):
        if weights.lam_tensors is not None:
            term = dc.mul(lt, weights.lam_tensors[i])
        else:
            term = dc.mul(lt, float(weights.lam[i]))
        total = term if total is None else dc.add(total, term)
    if weights.extra is not None:
        total = dc.add(total, weights.extra)
    return total


def igbv1_weights(losses: LossVector, base: BaselineLosses, epoch: int) -> WeightDecision:
    """Gap-proportional weights: n * softmax(L / L_base) after two warmup epochs."""
    n = len(losses)
    if epoch <= 2:
        return WeightDecision(np.ones(n))
    if not base.captured:
        raise StateError(f"epoch {epoch} weights need the epoch-2 baseline captured first")
    ratio = losses.values / base.l_base
    return WeightDecision(n * stable_softmax(ratio))


def rlw_weights(n: int, rng: np.random.Generator) -> WeightDecision:
    """Random weights: n * softmax of a standard-normal draw."""
    if n < 2:
        raise ContractError(f"random weighting needs n >= 2, got {n}")
    return WeightDecision(n * stable_softmax(rng.standard_normal(n)))


@dataclass
class StrategyState:
    """Mutable per-run state shared by the loss strategies."""

    kind: str
    history: deque = field(default_factory=lambda: deque(maxlen=2))
    uw_log_sigma: list[Tensor] | None = None
    rng: np.random.Generator | None = None


def dwa_weights(state: StrategyState, n: int) -> WeightDecision:
    """Loss-descent-rate weights with temperature 2; all-ones during warmup."""
    if len(state.history) < 2:
        return WeightDecision(np.ones(n))
    prev, prev2 = state.history[-1], state.history[-2]
    r = np.asarray(prev, dtype=np.float64) / np.asarray(prev2, dtype=np.float64)
    return WeightDecision(n * stable_softmax(r / DWA_TEMPERATURE))


class LossStrategy:
    """Base class: produce weights per batch, then assemble the total loss."""

    name = "base"
    default_si = False

    def __init__(self, n: int, rng: np.random.Generator | None = None,
                 use_si: bool | None = None) -> None:
        if n < 1:
            raise ConfigError(f"task count must be >= 1, got {n}")
        self.n = n
        self.use_si = self.default_si if use_si is None else bool(use_si)
        self.state = StrategyState(kind=self.name, rng=rng)

    def parameters(self) -> list[Tensor]:
        return []

    def decide(self, losses: LossVector, epoch: int, batch_index: int,
               batches_per_epoch: int) -> WeightDecision:
        raise NotImplementedError

    def end_epoch(self, epoch: int, mean_losses: np.ndarray) -> None:
        pass

    def total_loss(self, losses: LossVector, decision: WeightDecision) -> Tensor:
        if self.use_si:
            return total_loss_si(losses, decision)
        return total_loss_weighted_sum(losses, decision)


class EqualWeighting(LossStrategy):
    name = "ew"
    default_si = False

    def decide(self, losses, epoch, batch_index, batches_per_epoch):
        return WeightDecision(np.ones(self.n))


class ScaleInvariantWeighting(EqualWeighting):
    """All-ones weights on the scale-invariant objective."""

    name = "si"
    default_si = True


class RandomWeighting(LossStrategy):
    name = "rlw"
    default_si = False

    def __init__(self, n, rng=None, use_si=None):
        super().__init__(n, rng, use_si)
        if self.state.rng is None:
            raise ConfigError("random weighting needs a seeded generator")

    def decide(self, losses, epoch, batch_index, batches_per_epoch):
        return rlw_weights(self.n, self.state.rng)


class DescentRateWeighting(LossStrategy):
    name = "dwa"
    default_si = False

    def decide(self, losses, epoch, batch_index, batches_per_epoch):
        return dwa_weights(self.state, self.n)

    def end_epoch(self, epoch, mean_losses):
        self.state.history.append(np.asarray(mean_losses, dtype=np.float64))


class UncertaintyWeighting(LossStrategy):
    """Homoscedastic-uncertainty weights, one trainable log-sigma per task.

    The effective task weight is 0.5 * exp(-2 * log_sigma), and the
    objective carries an additive sum of log-sigmas; both ride the tape
    so the model optimizer trains the log-sigmas too.
    """

    name = "uw"
    default_si = False

    def __init__(self, n, rng=None, use_si=None):
        super().__init__(n, rng, use_si)
        self.state.uw_log_sigma = [
            Tensor(np.zeros(()), requires_grad=True) for _ in range(n)
        ]

    def parameters(self):
        return list(self.state.uw_log_sigma)

    def decide(self, losses, epoch, batch_index, batches_per_epoch):
        lam_tensors = []
        extra: Tensor | None = None
        for s in self.state.uw_log_sigma:
            lam_tensors.append(dc.mul(dc.exp(dc.mul(s, -2.0)), 0.5))
            extra = s if extra is None else dc.add(extra, s)
        lam = np.array([t.item() for t in lam_tensors])
        return WeightDecision(lam, constrained=False, lam_tensors=lam_tensors,
                              extra=extra)


class ImprovableGapV1(LossStrategy):
    """Softmax of current-to-baseline loss ratios after a two-epoch warmup."""

    name = "igbv1"
    default_si = True

    def __init__(self, n, rng=None, use_si=None):
        super().__init__(n, rng, use_si)
        self.base = BaselineLosses()
        self._epoch2_losses: list[np.ndarray] = []
        self._last_seen: tuple[int, int] | None = None

    def decide(self, losses, epoch, batch_index, batches_per_epoch):
        if epoch == 2 and self._last_seen != (epoch, batch_index):
            self._epoch2_losses.append(losses.values.copy())
            self._last_seen = (epoch, batch_index)
            if batch_index == batches_per_epoch:
                capture_l_base(self.base, np.stack(self._epoch2_losses), epoch)
        return igbv1_weights(losses, self.base, epoch)


LOSS_STRATEGIES = {
    cls.name: cls
    for cls in (
        EqualWeighting,
        ScaleInvariantWeighting,
        RandomWeighting,
        DescentRateWeighting,
        UncertaintyWeighting,
        ImprovableGapV1,
    )
}


def make_strategy(kind: str, n: int, rng: np.random.Generator | None = None,
                  use_si: bool | None = None) -> LossStrategy:
    if kind not in LOSS_STRATEGIES:
        raise ConfigError(
            f"unknown loss strategy {kind!r}; valid: {', '.join(sorted(LOSS_STRATEGIES))}"
        )
    return LOSS_STRATEGIES[kind](n, rng=rng, use_si=use_si)
