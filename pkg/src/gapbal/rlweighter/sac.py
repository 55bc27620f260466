"""Soft actor-critic over the loss-weighting action space.

State is the vector of current per-task batch losses (log-transformed
before entering any network, since raw losses span several orders of
magnitude); the action is a positive weight vector summing to the task
count, produced by a tanh-squashed Gaussian followed by a scaled softmax.
Entropy and log-probabilities live in tanh space; the softmax map is a
deterministic post-processing step and contributes no Jacobian term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import diffcore as dc
from ..diffcore import Adam, Linear, Mlp, Tape, Tensor
from ..errors import ConfigError, ContractError
from ..lossbal import WeightDecision, stable_softmax
from .buffer import ReplayBuffer

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6


def featurize(state: np.ndarray) -> np.ndarray:
    """Log-compress raw losses into a network-friendly range."""
    return np.log(np.maximum(state, 1e-12))


class GaussianActor:
    """Shared body with separate mean and log-std output layers."""

    def __init__(self, n: int, hidden: list[int], rng: np.random.Generator) -> None:
        self.body = Mlp([n] + hidden, rng)
        self.mean_head = Linear(hidden[-1], n, rng)
        self.log_std_head = Linear(hidden[-1], n, rng)

    def parameters(self) -> list[Tensor]:
        return (self.body.parameters() + self.mean_head.parameters()
                + self.log_std_head.parameters())

    def forward(self, features: Tensor) -> tuple[Tensor, Tensor]:
        rep = dc.relu(self.body(features))
        mean = self.mean_head(rep)
        log_std = dc.clamp(self.log_std_head(rep), LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    def infer(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rep = np.maximum(self.body.infer(features), 0.0)
        mean = self.mean_head.infer(rep)
        log_std = np.clip(self.log_std_head.infer(rep), LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std


@dataclass
class SacDiagnostics:
    """What one update round did; ``updated`` is False for no-op rounds."""

    updated: bool
    critic1_loss: float = float("nan")
    critic2_loss: float = float("nan")
    actor_loss: float = float("nan")
    entropy: float = float("nan")
    ent_alpha: float = float("nan")


class SacAgent:
    """Twin-critic SAC with soft target updates and a fixed or learned
    entropy temperature."""

    def __init__(
        self,
        n: int,
        seed: int,
        hidden: list[int] | None = None,
        gamma: float = 0.99,
        tau: float = 0.005,
        ent_alpha: float = 0.2,
        auto_entropy: bool = False,
        agent_lr: float = 3e-4,
        update_batch: int = 256,
        grad_steps: int = 1,
    ) -> None:
        if n < 1:
            raise ConfigError(f"action dimension must be >= 1, got {n}")
        if not (0.0 <= gamma <= 1.0) or not (0.0 < tau <= 1.0):
            raise ConfigError(f"need 0 <= gamma <= 1 and 0 < tau <= 1, got {gamma}, {tau}")
        hidden = [64, 64] if hidden is None else list(hidden)
        self.n = n
        self.gamma = gamma
        self.tau = tau
        self.auto_entropy = auto_entropy
        self.target_entropy = -float(n)
        self.update_batch = update_batch
        self.grad_steps = grad_steps
        self.rng = np.random.default_rng(np.random.SeedSequence(seed))

        init_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        self.actor = GaussianActor(n, hidden, init_rng)
        self.critic1 = Mlp([2 * n] + hidden + [1], init_rng)
        self.critic2 = Mlp([2 * n] + hidden + [1], init_rng)
        self.target1 = Mlp([2 * n] + hidden + [1], init_rng)
        self.target2 = Mlp([2 * n] + hidden + [1], init_rng)
        self._copy_params(self.critic1, self.target1)
        self._copy_params(self.critic2, self.target2)

        self.log_alpha = Tensor(np.log(max(ent_alpha, 1e-8)), requires_grad=True)
        self.actor_opt = Adam(self.actor.parameters(), lr=agent_lr)
        self.critic1_opt = Adam(self.critic1.parameters(), lr=agent_lr)
        self.critic2_opt = Adam(self.critic2.parameters(), lr=agent_lr)
        self.alpha_opt = Adam([self.log_alpha], lr=agent_lr)

    @staticmethod
    def _copy_params(src: Mlp, dst: Mlp) -> None:
        for ps, pd in zip(src.parameters(), dst.parameters()):
            pd.data = ps.data.copy()

    @property
    def ent_alpha(self) -> float:
        return float(np.exp(self.log_alpha.data))

    def parameters(self) -> list[Tensor]:
        return (self.actor.parameters() + self.critic1.parameters()
                + self.critic2.parameters() + self.target1.parameters()
                + self.target2.parameters() + [self.log_alpha])

    def action_from_features(self, feats: np.ndarray, deterministic: bool,
                             rng: np.random.Generator) -> np.ndarray:
        mean, log_std = self.actor.infer(feats)
        z = mean if deterministic else mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        u = np.tanh(z)
        return np.array([self.n * stable_softmax(row) for row in u])


def select_action(agent: SacAgent, state: np.ndarray, deterministic: bool = False,
                  rng: np.random.Generator | None = None) -> WeightDecision:
    """Map batch losses to a weight vector via the actor (numpy fast path)."""
    state = np.asarray(state, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(state)):
        raise ContractError(f"non-finite state {state}")
    if state.size != agent.n:
        raise ContractError(f"state has {state.size} entries for {agent.n} tasks")
    rng = agent.rng if rng is None else rng
    lam = agent.action_from_features(featurize(state)[None, :], deterministic, rng)[0]
    return WeightDecision(lam)


def _tape_policy(agent: SacAgent, feats: Tensor, noise: np.ndarray):
    """Reparameterized action and its tanh-space log-probability, on tape."""
    mean, log_std = agent.actor.forward(feats)
    std = dc.exp(log_std)
    z = dc.add(mean, dc.mul(std, noise))
    u = dc.tanh(z)
    action = dc.mul(dc.softmax(u, axis=1), float(agent.n))
    log_prob = dc.gaussian_log_prob(mean, log_std, z)
    correction = dc.log(dc.add(dc.neg(dc.square(u)), 1.0 + SQUASH_EPS))
    per_dim = dc.sub(log_prob, correction)
    return action, dc.tsum(per_dim, axis=1, keepdims=True)


def _critic_eval(critic: Mlp, feats_np: np.ndarray, action: Tensor) -> Tensor:
    joined = dc.concat([Tensor(feats_np), action], axis=1)
    return critic(joined)


def sac_update(agent: SacAgent, buffer: ReplayBuffer) -> SacDiagnostics:
    """One training round: twin critic steps, an actor step, optional
    temperature step, and the soft target update.

    The whole round runs with any ambient tape suspended: it is its own
    optimization and must never leak nodes onto a caller's tape.
    """
    if len(buffer) < agent.update_batch:
        return SacDiagnostics(updated=False)
    with Tape.suspended():
        return _sac_update_inner(agent, buffer)


def _sac_update_inner(agent: SacAgent, buffer: ReplayBuffer) -> SacDiagnostics:
    batch = buffer.sample(agent.update_batch, agent.rng)
    states = featurize(np.stack([t.state for t in batch]))
    actions = np.stack([t.action for t in batch])
    rewards = np.array([t.reward for t in batch]).reshape(-1, 1)
    next_states = featurize(np.stack([t.next_state for t in batch]))

    diag = SacDiagnostics(updated=True)
    for _ in range(agent.grad_steps):
        # soft Bellman target from the frozen networks (plain numpy)
        next_mean, next_log_std = agent.actor.infer(next_states)
        next_noise = agent.rng.standard_normal(next_mean.shape)
        next_z = next_mean + np.exp(next_log_std) * next_noise
        next_u = np.tanh(next_z)
        next_action = agent.n * (
            np.exp(next_u - next_u.max(axis=1, keepdims=True))
            / np.exp(next_u - next_u.max(axis=1, keepdims=True)).sum(axis=1, keepdims=True)
        )
        t = (next_z - next_mean) / np.exp(next_log_std)
        next_lp = (
            -0.5 * t * t - next_log_std - 0.5 * np.log(2.0 * np.pi)
            - np.log(1.0 - next_u * next_u + SQUASH_EPS)
        ).sum(axis=1, keepdims=True)
        joined_next = np.concatenate([next_states, next_action], axis=1)
        q_next = np.minimum(agent.target1.infer(joined_next),
                            agent.target2.infer(joined_next))
        targets = rewards + agent.gamma * (q_next - agent.ent_alpha * next_lp)

        for critic, opt, slot in ((agent.critic1, agent.critic1_opt, "critic1_loss"),
                                  (agent.critic2, agent.critic2_opt, "critic2_loss")):
            opt.zero_grad()
            with Tape() as tape:
                q = _critic_eval(critic, states, Tensor(actions))
                loss = dc.mse_loss(q, targets)
                tape.backward(loss)
            opt.step()
            setattr(diag, slot, loss.item())

        # actor step: maximize min-critic value plus entropy
        noise = agent.rng.standard_normal((agent.update_batch, agent.n))
        agent.actor_opt.zero_grad()
        with Tape() as tape:
            action, log_prob = _tape_policy(agent, Tensor(states), noise)
            q1 = _critic_eval(agent.critic1, states, action)
            q2 = _critic_eval(agent.critic2, states, action)
            qmin = dc.minimum(q1, q2)
            actor_loss = dc.tmean(dc.sub(dc.mul(log_prob, agent.ent_alpha), qmin))
            tape.backward(actor_loss)
        agent.actor_opt.step()
        diag.actor_loss = actor_loss.item()
        diag.entropy = float(-log_prob.data.mean())

        if agent.auto_entropy:
            residual = float(-(log_prob.data.mean() + agent.target_entropy))
            agent.alpha_opt.zero_grad()
            with Tape() as tape:
                alpha_loss = dc.mul(agent.log_alpha, residual)
                tape.backward(alpha_loss)
            agent.alpha_opt.step()

        for critic, target in ((agent.critic1, agent.target1),
                               (agent.critic2, agent.target2)):
            for pc, pt in zip(critic.parameters(), target.parameters()):
                pt.data = (1.0 - agent.tau) * pt.data + agent.tau * pc.data

    diag.ent_alpha = agent.ent_alpha
    return diag
