"""Gradient aggregators over shared parameters, and the combined update step.

A loss balancer decides per-task weights; this module turns each weighted
task loss into its own shared-parameter gradient, merges those gradients
with a chosen aggregator (min-norm convex combination, conflict projection,
or plain mean), and applies the merged direction together with the
per-task head updates through one shared Adam state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diffcore as dc
from .diffcore import Adam, Tape, Tensor
from .errors import ConfigError, ContractError, DomainError
from .lossbal import LossStrategy, WeightDecision
from .mtlmodel import LossVector, MultiTaskModel

MGDA_MAX_ITERS = 250
MGDA_TOL = 1e-6


@dataclass
class TaskGradients:
    """One flattened shared-parameter gradient per task, stacked (n, d)."""

    grads: np.ndarray

    def __post_init__(self) -> None:
        self.grads = np.asarray(self.grads, dtype=np.float64)
        if self.grads.ndim != 2:
            raise ContractError(f"need a (tasks, dim) stack, got shape {self.grads.shape}")
        if not np.all(np.isfinite(self.grads)):
            raise DomainError("task gradients must be finite")

    @property
    def n(self) -> int:
        return self.grads.shape[0]


@dataclass
class SimplexWeights:
    """Convex-combination coefficients over tasks."""

    gamma: np.ndarray

    def __post_init__(self) -> None:
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        if abs(self.gamma.sum() - 1.0) > 1e-9:
            raise DomainError(f"simplex weights must sum to 1, got {self.gamma.sum()!r}")
        if self.gamma.min() < -1e-12:
            raise DomainError(f"simplex weights must be non-negative, got {self.gamma}")


def _min_norm_pair(m11: float, m12: float, m22: float) -> float:
    """Coefficient on the first of two points minimizing the combined norm."""
    denom = m11 - 2.0 * m12 + m22
    if denom <= 1e-24:
        return 0.5
    gamma = (m22 - m12) / denom
    return float(np.clip(gamma, 0.0, 1.0))


def mgda_aggregate(
    task_grads: TaskGradients,
    max_iters: int = MGDA_MAX_ITERS,
    tol: float = MGDA_TOL,
    force_frank_wolfe: bool = False,
) -> tuple[np.ndarray, SimplexWeights]:
    """Min-norm point of the gradient convex hull, by Frank-Wolfe.

    Returns the combined gradient and its simplex coefficients. Two tasks
    use the closed-form solution (``force_frank_wolfe`` routes them through
    the iteration instead, which exists so the two can be checked against
    each other); more tasks run Frank-Wolfe with exact line search plus
    away steps, stopping when the linearized improvement gap falls below
    ``tol`` or after ``max_iters`` iterations. All-zero inputs yield a
    zero vector with uniform coefficients.
    """
    g = task_grads.grads
    n = task_grads.n
    if not np.any(g):
        return np.zeros(g.shape[1]), SimplexWeights(np.full(n, 1.0 / n))
    if n == 1:
        return g[0].copy(), SimplexWeights(np.ones(1))
    gram = g @ g.T
    if n == 2 and not force_frank_wolfe:
        gamma1 = _min_norm_pair(gram[0, 0], gram[0, 1], gram[1, 1])
        gamma = np.array([gamma1, 1.0 - gamma1])
        return gamma @ g, SimplexWeights(gamma)

    gamma = np.zeros(n)
    gamma[int(np.argmin(np.diag(gram)))] = 1.0
    for _ in range(max_iters):
        grad = 2.0 * gram @ gamma
        fw = int(np.argmin(grad))
        gap = float(gamma @ grad - grad[fw])
        if gap < tol:
            break
        # away vertex: the active coordinate whose removal helps most
        active = gamma > 0.0
        away = int(np.flatnonzero(active)[np.argmax(grad[active])])
        use_away = grad[away] - gamma @ grad > gamma @ grad - grad[fw]
        if use_away:
            # shift mass off the worst active vertex onto the rest
            direction = gamma.copy()
            direction[away] -= 1.0
            t_max = gamma[away] / (1.0 - gamma[away]) if gamma[away] < 1.0 else 0.0
        else:
            direction = -gamma
            direction[fw] += 1.0
            t_max = 1.0
        curv = float(direction @ gram @ direction)
        if curv <= 1e-24:
            break
        t = float(np.clip(-(gamma @ gram @ direction) / curv, 0.0, t_max))
        if t <= 0.0:
            break
        gamma = gamma + t * direction
        gamma = np.clip(gamma, 0.0, None)
        gamma /= gamma.sum()
    return gamma @ g, SimplexWeights(gamma)


def pcgrad_aggregate(task_grads: TaskGradients, rng: np.random.Generator) -> np.ndarray:
    """Mean of task gradients after projecting away pairwise conflicts.

    Each task's gradient drops its component along any other task's
    original gradient that it opposes, visiting the others in an order
    drawn from ``rng``; zero-norm opponents are skipped.
    """
    g = task_grads.grads
    n = task_grads.n
    sq_norms = np.einsum("ij,ij->i", g, g)
    projected = g.copy()
    for i in range(n):
        others = np.array([j for j in range(n) if j != i])
        if others.size:
            others = others[rng.permutation(others.size)]
        for j in others:
            if sq_norms[j] == 0.0:
                continue
            dot = float(projected[i] @ g[j])
            if dot < 0.0:
                projected[i] = projected[i] - (dot / sq_norms[j]) * g[j]
    return projected.mean(axis=0)


def mean_aggregate(task_grads: TaskGradients) -> tuple[np.ndarray, SimplexWeights]:
    """Plain average; the identity choice for combination procedures."""
    n = task_grads.n
    gamma = np.full(n, 1.0 / n)
    return gamma @ task_grads.grads, SimplexWeights(gamma)


def _agg_mgda(task_grads, rng):
    return mgda_aggregate(task_grads)


def _agg_pcgrad(task_grads, rng):
    return pcgrad_aggregate(task_grads, rng), None


def _agg_mean(task_grads, rng):
    return mean_aggregate(task_grads)


AGGREGATORS: dict[str, Callable] = {
    "mean": _agg_mean,
    "mgda": _agg_mgda,
    "pcgrad": _agg_pcgrad,
}


def register_aggregator(name: str, fn: Callable) -> None:
    """Extension point: ``fn(task_grads, rng) -> (vector, SimplexWeights | None)``."""
    if name in AGGREGATORS:
        raise ConfigError(f"aggregator {name!r} already registered")
    AGGREGATORS[name] = fn


def make_aggregator(name: str) -> Callable:
    if name not in AGGREGATORS:
        raise ConfigError(
            f"unknown aggregator {name!r}; valid: {', '.join(sorted(AGGREGATORS))}"
        )
    return AGGREGATORS[name]


@dataclass
class CombineResult:
    """What one combined update did: weights, coefficients, merged gradient."""

    decision: WeightDecision
    gamma: SimplexWeights | None
    merged: np.ndarray


def _flatten(params: list[Tensor]) -> np.ndarray:
    return np.concatenate(
        [np.zeros(p.data.size) if p.grad is None else p.grad.ravel() for p in params]
    )


def _assign(params: list[Tensor], flat: np.ndarray) -> None:
    offset = 0
    for p in params:
        size = p.data.size
        p.grad = flat[offset : offset + size].reshape(p.data.shape).copy()
        offset += size


def combine_step(
    strategy: LossStrategy,
    aggregator: Callable,
    model: MultiTaskModel,
    losses: LossVector,
    tape: Tape,
    optimizer: Adam,
    rng: np.random.Generator,
    epoch: int,
    batch_index: int,
    batches_per_epoch: int,
) -> CombineResult:
    """One combined loss-balancing + gradient-balancing parameter update.

    The strategy's weights define one scalar term per task; each term gets
    its own backward pass, so the shared parameters see exactly n gradient
    computations (observable on ``tape.backward_passes``) while each head
    only ever receives its own task's gradient. The aggregator merges the
    shared-parameter gradients and one shared Adam step applies everything.
    """
    if strategy.n != model.n:
        raise ConfigError(
            f"strategy balances {strategy.n} tasks but model has {model.n}"
        )
    if len(losses) != model.n:
        raise ConfigError(f"{len(losses)} losses for a {model.n}-task model")
    decision = strategy.decide(losses, epoch, batch_index, batches_per_epoch)
    shared = model.shared_parameters()

    optimizer.zero_grad()
    rows = []
    for i, loss_t in enumerate(losses.tensors):
        base = dc.log(loss_t) if strategy.use_si else loss_t
        if decision.lam_tensors is not None:
            term = dc.mul(base, decision.lam_tensors[i])
        else:
            term = dc.mul(base, float(decision.lam[i]))
        tape.backward(term)
        rows.append(_flatten(shared))
        for p in shared:
            p.grad = None
    if decision.extra is not None:
        tape.backward(decision.extra)

    merged, gamma = aggregator(TaskGradients(np.stack(rows)), rng)
    _assign(shared, merged)
    optimizer.step()
    return CombineResult(decision=decision, gamma=gamma, merged=merged)
