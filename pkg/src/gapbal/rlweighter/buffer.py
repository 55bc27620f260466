"""FIFO transition storage with uniform minibatch sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DomainError


@dataclass
class Transition:
    """One (state, action, reward, next_state) step of the weighting MDP.

    States are raw per-task batch losses; the action is the weight vector
    that was applied, positive and summing to the task count.
    """

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray

    def __post_init__(self) -> None:
        self.state = np.asarray(self.state, dtype=np.float64)
        self.action = np.asarray(self.action, dtype=np.float64)
        self.next_state = np.asarray(self.next_state, dtype=np.float64)
        self.reward = float(self.reward)
        for name, arr in (("state", self.state), ("action", self.action),
                          ("next_state", self.next_state)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"non-finite {name} in transition: {arr}")
        if not np.isfinite(self.reward):
            raise DomainError(f"non-finite reward {self.reward}")
        n = self.action.size
        if np.any(self.action <= 0.0) or abs(self.action.sum() - n) > 1e-9:
            raise DomainError(
                f"action must be positive and sum to {n}, got {self.action}"
            )


class ReplayBuffer:
    """Fixed-capacity ring of transitions; oldest entries are overwritten."""

    def __init__(self, capacity: int = 10_000) -> None:
        if capacity < 1:
            raise ContractError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._storage: list[Transition] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._storage)

    def push(self, transition: Transition) -> None:
        if len(self._storage) < self.capacity:
            self._storage.append(transition)
        else:
            self._storage[self._cursor] = transition
        self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform sample without replacement within the minibatch."""
        if batch_size > len(self._storage):
            raise ContractError(
                f"cannot sample {batch_size} from buffer of size {len(self._storage)}"
            )
        idx = rng.choice(len(self._storage), size=batch_size, replace=False)
        return [self._storage[i] for i in idx]

    def snapshot(self) -> list[Transition]:
        """Current contents in insertion-ring order (oldest first)."""
        if len(self._storage) < self.capacity:
            return list(self._storage)
        return self._storage[self._cursor:] + self._storage[:self._cursor]
