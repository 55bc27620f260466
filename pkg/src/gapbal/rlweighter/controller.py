"""Reinforcement-learned loss weighting: scheduling, rewards, transitions.

The controller runs the weighting MDP alongside MTL training. Each batch's
losses are the state; the emitted weights are the action; the reward is
the (learning-rate-compensated) worst-task normalized loss decline seen at
the next batch. Warmup epochs use random weights, then the actor takes
over; the agent trains from the buffer on a fixed batch cadence.
"""

from __future__ import annotations

import numpy as np

from ..diffcore import LrSchedule
from ..errors import ContractError, StateError
from ..lossbal import (
    BaselineLosses,
    LossStrategy,
    WeightDecision,
    capture_l_base,
    rlw_weights,
)
from ..mtlmodel import LossVector
from .buffer import ReplayBuffer, Transition
from .sac import SacAgent, SacDiagnostics, sac_update, select_action


def _values(losses) -> np.ndarray:
    if isinstance(losses, LossVector):
        return losses.values
    return np.asarray(losses, dtype=np.float64)


def compute_reward(
    l_t,
    l_next,
    base: BaselineLosses,
    lr_now: float,
    lr_init: float,
    use_min: bool = True,
    use_alpha: bool = True,
) -> float:
    """Worst-task (or mean-task) normalized loss decline, scaled by the
    ratio of initial to current learning rate.

    ``use_min`` and ``use_alpha`` are ablation switches; both on is the
    standard formula.
    """
    if not base.captured:
        raise StateError("reward needs the epoch-2 baseline captured")
    if lr_now <= 0.0 or lr_init <= 0.0:
        raise ContractError(f"learning rates must be positive, got {lr_init}, {lr_now}")
    declines = (_values(l_t) - _values(l_next)) / base.l_base
    agg = float(declines.min()) if use_min else float(declines.mean())
    alpha = (lr_init / lr_now) if use_alpha else 1.0
    return alpha * agg


class Igbv2Controller(LossStrategy):
    """Loss strategy whose weights come from a soft actor-critic agent.

    Epochs 1 and 2 warm up on random weights while the baseline losses
    accumulate; transitions enter the buffer from epoch 3; agent training
    starts at ``update_e`` on an every-``update_every``-batches cadence;
    the actor's weights are used from ``use_e``, random weights before.
    """

    name = "igbv2"
    default_si = True

    def __init__(
        self,
        n: int,
        agent: SacAgent,
        buffer: ReplayBuffer,
        schedule: LrSchedule,
        rng: np.random.Generator,
        update_e: int = 4,
        use_e: int = 6,
        update_every: int = 50,
        use_min: bool = True,
        use_alpha: bool = True,
        use_si: bool | None = None,
    ) -> None:
        super().__init__(n, rng=rng, use_si=use_si)
        self.agent = agent
        self.buffer = buffer
        self.schedule = schedule
        self.update_e = update_e
        self.use_e = use_e
        self.update_every = update_every
        self.use_min = use_min
        self.use_alpha = use_alpha
        self.base = BaselineLosses()
        self.pending: tuple[np.ndarray, np.ndarray] | None = None
        self.last_source = "rlw"
        self.last_reward: float | None = None
        self.last_diag: SacDiagnostics | None = None
        self._epoch2_losses: list[np.ndarray] = []
        self._last_step: tuple[int, int] | None = None
        self._global_batch = 0

    def decide(self, losses, epoch, batch_index, batches_per_epoch):
        lr_now = self.schedule.lr_at(epoch)
        return igbv2_step(self, self.agent, self.buffer, losses, epoch,
                          batch_index, batches_per_epoch, lr_now)

    def end_epoch(self, epoch: int, mean_losses: np.ndarray) -> None:
        pass


def igbv2_step(
    controller: Igbv2Controller,
    agent: SacAgent,
    buffer: ReplayBuffer,
    losses,
    epoch: int,
    batch_index: int,
    batches_per_epoch: int,
    lr_now: float,
) -> WeightDecision:
    """One batch of the weighting MDP, in strict batch order.

    Finalizes the previous batch's pending transition against the incoming
    losses, trains the agent if the cadence says so, emits this batch's
    weights, and caches them as the next pending transition.
    """
    step = (epoch, batch_index)
    last = controller._last_step
    expected_next = (
        last is None
        or step == (last[0], last[1] + 1)
        or step == (last[0] + 1, 1)
    )
    if not expected_next:
        raise ContractError(f"batch {step} arrived after {last}; steps must be contiguous")
    controller._last_step = step
    controller._global_batch += 1

    values = _values(losses)

    # keep the epoch-2 running record and freeze the baseline on its last batch
    if epoch == 2:
        controller._epoch2_losses.append(values.copy())
        if batch_index == batches_per_epoch:
            capture_l_base(controller.base, np.stack(controller._epoch2_losses), epoch)

    controller.last_reward = None
    if epoch > 2 and controller.pending is not None:
        state, action = controller.pending
        reward = compute_reward(
            state, values, controller.base, lr_now, controller.schedule.base_lr,
            use_min=controller.use_min, use_alpha=controller.use_alpha,
        )
        buffer.push(Transition(state, action, reward, values))
        controller.last_reward = reward

    controller.last_diag = None
    if epoch >= controller.update_e and controller._global_batch % controller.update_every == 0:
        controller.last_diag = sac_update(agent, buffer)

    if epoch < controller.use_e:
        decision = rlw_weights(controller.n, controller.state.rng)
        controller.last_source = "rlw"
    else:
        decision = select_action(agent, values, deterministic=False)
        controller.last_source = "actor"

    controller.pending = (values.copy(), decision.lam.copy())
    return decision
