"""Dense float64 tensors with tape-recorded reverse-mode differentiation.

The tape is rebuilt for every forward pass: enter a ``Tape`` as a context
manager, build the computation inside the block, then call ``backward``
on a scalar result. Ops executed outside any tape run as plain numpy and
record nothing, which is the fast path for inference.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, DomainError, ShapeError

Array = np.ndarray

_EXP_MAX = 700.0  # exp(709) is the last finite double; stay clear of it

_LOCAL = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_LOCAL, "tape", None)


class Tape:
    """Ordered record of ops for one forward pass.

    ``backward`` may be called several times on the same tape (once per
    loss term); each call walks the node list exactly once in reverse.
    Gradients of leaf tensors with ``requires_grad`` accumulate across
    calls, so zero them between independent passes.
    """

    def __init__(self) -> None:
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._produced: set[int] = set()
        self.backward_passes = 0

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise ContractError("tapes do not nest; close the active tape first")
        _LOCAL.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _LOCAL.tape = None

    @staticmethod
    def suspended() -> "_SuspendedTape":
        """Deactivate the ambient tape for a deliberately isolated block.

        Accidental nesting stays an error; code that must run its own
        tapes mid-pass (a self-contained inner optimization) makes that
        explicit here, and the outer tape resumes on exit untouched.
        """
        return _SuspendedTape()

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, out: "Tensor", parents: tuple["Tensor", ...], pullback: Callable) -> None:
        self._nodes.append((out, parents, pullback))
        self._produced.add(id(out))

    def backward(self, root: "Tensor") -> None:
        """Propagate d(root)/d(leaf) into every requires_grad leaf.

        Intermediate gradients live in a scratch dict keyed by tensor id,
        so repeated backward calls on one tape never contaminate each
        other; only leaf ``.grad`` slots accumulate.
        """
        if root.data.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {root.shape}")
        if not self._nodes:
            raise ContractError("backward called on an empty tape")
        grads: dict[int, Array] = {id(root): np.ones_like(root.data)}
        for out, parents, pullback in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, pullback(g)):
                if pg is None:
                    continue
                if id(parent) in self._produced:
                    acc = grads.get(id(parent))
                    grads[id(parent)] = pg if acc is None else acc + pg
                elif parent.requires_grad:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
        self.backward_passes += 1


class _SuspendedTape:
    def __enter__(self) -> None:
        self._prev = _active_tape()
        _LOCAL.tape = None

    def __exit__(self, exc_type, exc, tb) -> None:
        _LOCAL.tape = self._prev


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False) -> None:
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DomainError("tensor data must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars and plain ndarrays act as constants.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def _result(data: Array, requires_grad: bool) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = requires_grad
    t.grad = None
    return t


def _emit(data: Array, parents: tuple[Tensor, ...], pullback: Callable) -> Tensor:
    out = _result(data, any(p.requires_grad for p in parents))
    tape = _active_tape()
    if tape is not None:
        tape.record(out, parents, pullback)
    return out


def _as_constant(value) -> Array | float:
    """Coerce a non-Tensor operand to a float or float64 array constant."""
    if isinstance(value, (int, float)):
        return float(value)
    return np.asarray(value, dtype=np.float64)


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = _as_constant(b)
        return _emit(a.data + c, (a,), lambda g: (g,))
    if a.data.shape == b.data.shape:
        return _emit(a.data + b.data, (a, b), lambda g: (g, g))
    # bias-add: (batch, dim) + (dim,)
    if a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        return _emit(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    if b.data.ndim == 2 and a.data.ndim == 1 and b.data.shape[1] == a.data.shape[0]:
        return _emit(a.data + b.data, (a, b), lambda g: (g.sum(axis=0), g))
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = _as_constant(b)
        return _emit(a.data - c, (a,), lambda g: (g,))
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = _as_constant(b)
        return _emit(a.data * c, (a,), lambda g: (g * c,))
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _emit(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _emit(a.data * mask, (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _emit(t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a: Tensor) -> Tensor:
    hi = float(np.max(a.data)) if a.data.size else 0.0
    if hi > _EXP_MAX:
        raise DomainError(f"exp overflow: input value {hi} exceeds {_EXP_MAX}")
    e = np.exp(a.data)
    return _emit(e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        offender = float(np.min(a.data))
        raise DomainError(f"log of non-positive value {offender}")
    ad = a.data
    return _emit(np.log(ad), (a,), lambda g: (g / ad,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _emit(ad * ad, (a,), lambda g: (g * 2.0 * ad,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    mask = a.data > floor
    return _emit(np.maximum(a.data, floor), (a,), lambda g: (g * mask,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input is interior."""
    if lo >= hi:
        raise ContractError(f"clamp needs lo < hi, got [{lo}, {hi}]")
    mask = (a.data > lo) & (a.data < hi)
    return _emit(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; gradient routes to the smaller input (ties to ``a``)."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"minimum: incompatible shapes {a.shape} and {b.shape}")
    mask = a.data <= b.data
    return _emit(np.where(mask, a.data, b.data), (a, b), lambda g: (g * mask, g * ~mask))


def _unreduce(g: Array, shape: tuple[int, ...], axis: int | None, keepdims: bool) -> Array:
    if axis is None:
        return np.broadcast_to(g, shape).astype(np.float64, copy=True)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).astype(np.float64, copy=True)


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    shape = a.data.shape
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    return _emit(out, (a,), lambda g: (_unreduce(g, shape, axis, keepdims),))


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    shape = a.data.shape
    count = a.data.size if axis is None else shape[axis]
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    return _emit(out, (a,), lambda g: (_unreduce(g, shape, axis, keepdims) / count,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=axis, keepdims=True)

    def pull(g: Array):
        inner = np.sum(g * s, axis=axis, keepdims=True)
        return (s * (g - inner),)

    return _emit(s, (a,), pull)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    p = np.exp(out)

    def pull(g: Array):
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return _emit(out, (a,), pull)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ContractError("concat of an empty sequence")
    datas = [t.data for t in tensors]
    widths = [d.shape[axis] for d in datas]
    out = np.concatenate(datas, axis=axis)
    offsets = np.cumsum([0] + widths)

    def pull(g: Array):
        slicer = [slice(None)] * g.ndim
        pieces = []
        for i in range(len(widths)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(slicer)].copy())
        return tuple(pieces)

    return _emit(out, tuple(tensors), pull)


def gaussian_log_prob(mean: Tensor, log_std: Tensor, value) -> Tensor:
    """Elementwise log density of N(mean, exp(log_std)^2) at ``value``.

    ``value`` may be a Tensor (reparameterized sample on the tape) or a
    plain array constant. Shapes must match exactly.
    """
    val_t = value if isinstance(value, Tensor) else None
    vd = value.data if val_t is not None else np.asarray(value, dtype=np.float64)
    if mean.data.shape != log_std.data.shape or mean.data.shape != vd.shape:
        raise ShapeError(
            f"gaussian_log_prob: shapes {mean.shape}, {log_std.shape}, {vd.shape} differ"
        )
    std = np.exp(log_std.data)
    t = (vd - mean.data) / std
    out = -0.5 * t * t - log_std.data - 0.5 * math.log(2.0 * math.pi)

    if val_t is None:
        def pull(g: Array):
            return (g * t / std, g * (t * t - 1.0))

        return _emit(out, (mean, log_std), pull)

    def pull_v(g: Array):
        return (g * t / std, g * (t * t - 1.0), -g * t / std)

    return _emit(out, (mean, log_std, val_t), pull_v)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant (or taped) target."""
    return tmean(square(sub(pred, target)))


def cross_entropy(logits: Tensor, labels: Array) -> Tensor:
    """Mean softmax cross-entropy; ``labels`` are integer class indices."""
    labels = np.asarray(labels).reshape(-1)
    batch, n_classes = logits.data.shape
    if labels.shape[0] != batch:
        raise ShapeError(f"cross_entropy: {labels.shape[0]} labels for batch {batch}")
    onehot = np.zeros((batch, n_classes), dtype=np.float64)
    onehot[np.arange(batch), labels.astype(int)] = 1.0
    picked = tsum(mul(log_softmax(logits, axis=1), onehot))
    return mul(picked, -1.0 / batch)
