"""Tape-based reverse-mode autodiff, tiny feed-forward nets, and Adam."""

from .tensor import (
    Tape,
    Tensor,
    add,
    clamp,
    clamp_min,
    concat,
    cross_entropy,
    exp,
    gaussian_log_prob,
    log,
    log_softmax,
    matmul,
    minimum,
    mse_loss,
    mul,
    neg,
    relu,
    softmax,
    square,
    sub,
    tanh,
    tmean,
    tsum,
)
from .nn import Linear, Mlp, he_uniform
from .optim import Adam, AdamState, LrSchedule, adam_step

__all__ = [
    "Tape",
    "Tensor",
    "add",
    "clamp",
    "clamp_min",
    "concat",
    "cross_entropy",
    "exp",
    "gaussian_log_prob",
    "log",
    "log_softmax",
    "matmul",
    "minimum",
    "mse_loss",
    "mul",
    "neg",
    "relu",
    "softmax",
    "square",
    "sub",
    "tanh",
    "tmean",
    "tsum",
    "Linear",
    "Mlp",
    "he_uniform",
    "Adam",
    "AdamState",
    "LrSchedule",
    "adam_step",
]
