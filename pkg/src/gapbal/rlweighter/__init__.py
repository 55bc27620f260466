"""Reinforcement-learned task weighting: replay buffer, SAC agent, controller."""

from .buffer import ReplayBuffer, Transition
from .controller import Igbv2Controller, compute_reward, igbv2_step
from .sac import (
    GaussianActor,
    SacAgent,
    SacDiagnostics,
    featurize,
    sac_update,
    select_action,
)

__all__ = [
    "ReplayBuffer",
    "Transition",
    "Igbv2Controller",
    "compute_reward",
    "igbv2_step",
    "GaussianActor",
    "SacAgent",
    "SacDiagnostics",
    "featurize",
    "sac_update",
    "select_action",
]
