"""Small feed-forward building blocks on top of the tensor core."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ConfigError
from . import tensor as T
from .tensor import Tensor

_ACTIVATIONS = ("relu", "tanh", "identity")


def he_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear:
    """Affine map with trainable weight and bias leaves."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator) -> None:
        self.weight = Tensor(he_uniform(rng, in_dim, out_dim), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)

    def infer(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight.data + self.bias.data

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class Mlp:
    """Stack of Linear layers with a fixed activation between them.

    The activation is applied after every layer except the last, which
    stays linear so the caller can attach whatever head logic it needs.
    """

    def __init__(
        self,
        dims: Sequence[int],
        rng: np.random.Generator,
        activation: str = "relu",
    ) -> None:
        if len(dims) < 2:
            raise ConfigError(f"Mlp needs at least [in, out] dims, got {list(dims)}")
        if activation not in _ACTIVATIONS:
            raise ConfigError(
                f"unknown activation {activation!r}; valid: {', '.join(_ACTIVATIONS)}"
            )
        self.activation = activation
        self.layers = [
            Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)
        ]

    def _act(self, x: Tensor) -> Tensor:
        if self.activation == "relu":
            return T.relu(x)
        if self.activation == "tanh":
            return T.tanh(x)
        return x

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = self._act(layer(x))
        return self.layers[-1](x)

    def infer(self, x: np.ndarray) -> np.ndarray:
        """Pure numpy forward pass; records nothing on any tape."""
        for layer in self.layers[:-1]:
            x = layer.infer(x)
            if self.activation == "relu":
                x = np.maximum(x, 0.0)
            elif self.activation == "tanh":
                x = np.tanh(x)
        return self.layers[-1].infer(x)

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]
