"""Adam with bias correction, plus the step-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ContractError
from .tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates and the shared step count."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One Adam update; mutates ``state`` and returns the new parameter value."""
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam over a fixed parameter list; ``lr`` is mutable between steps."""

    def __init__(
        self,
        params: list[Tensor],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        if lr <= 0.0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.states = [
            AdamState(m=np.zeros_like(p.data), v=np.zeros_like(p.data))
            for p in self.params
        ]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        """Apply one update to every parameter whose gradient is set."""
        for p, s in zip(self.params, self.states):
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ContractError(
                    f"gradient shape {p.grad.shape} does not match parameter {p.data.shape}"
                )
            p.data = adam_step(p.data, p.grad, s, self.lr, self.beta1, self.beta2, self.eps)


@dataclass
class LrSchedule:
    """Halve the base rate every ``decay_every`` epochs (1-based epochs)."""

    base_lr: float
    decay_every: int = 100
    factor: float = 0.5

    def lr_at(self, epoch: int) -> float:
        if epoch < 1:
            raise ContractError(f"epochs are 1-based, got {epoch}")
        return self.base_lr * self.factor ** ((epoch - 1) // self.decay_every)
