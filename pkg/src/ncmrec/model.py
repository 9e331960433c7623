"""The bundle of structural functions: state encoder, reward head, agent, critics."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch import nn

from ncmrec.config import RunConfig
from ncmrec.encoder import DTYPE, HistoryPrefix, StateEncoder
from ncmrec.policy import PolicyNet, act, top_k
from ncmrec.reward import RewardHead
from ncmrec.rl import Critic


class NCMRecommender(nn.Module):
    """State encoder, reward head, agent and critics in one module.

    ``kind`` selects how actions are valued. Policy-gradient kinds use the
    agent's log-scores while ``td`` uses the state-action critic. ``random``
    ranks by a seeded random permutation as a no-learning baseline.
    """

    def __init__(self, n_items: int, config: RunConfig, kind: str | None = None):
        super().__init__()
        self.kind = kind or config.optimizer
        self.n_items = n_items
        d, s = config.embedding_dim, config.seed
        self.encoder = StateEncoder(n_items, d, config.heads, config.blocks, config.window, config.embedding_std, seed=s)
        self.reward = RewardHead(d, d, config.reward_hidden, temperature=config.reward_temperature, seed=s + 1)
        self.policy = PolicyNet(d, d, config.hidden, config.action_temperature, seed=s + 2)
        self.q_critic = Critic(d, d, config.hidden, seed=s + 3)
        self.v_critic = Critic(d, 0, config.hidden, seed=s + 4)
        self.joint_policy = config.td_joint_policy
        self.action_temperature = config.action_temperature

    def actions(self) -> torch.Tensor:
        return self.encoder.action_embeddings()

    def encode(self, prefixes: Sequence[HistoryPrefix]) -> torch.Tensor:
        return self.encoder.encode(prefixes)

    def q_values(self, states: torch.Tensor) -> torch.Tensor:
        a = self.actions().detach()
        if self.joint_policy:
            return self.policy.preactivation(states, a)
        return self.q_critic(states, a)

    def action_values(self, states: torch.Tensor) -> torch.Tensor:
        """Per-action log-weights whose softmax is the behaviour policy."""
        if self.kind == "td":
            return self.q_values(states) / self.action_temperature
        return self.policy.log_scores(states, self.actions().detach())

    @torch.no_grad()
    def rank(self, prefixes: Sequence[HistoryPrefix], k: int, rng: np.random.Generator | None = None) -> np.ndarray:
        if self.kind == "random":
            if rng is None:
                raise ValueError("random ranking needs a generator")
            return top_k(rng.random((len(prefixes), self.n_items)), k)
        return top_k(self.action_values(self.encode(prefixes)), k)

    @torch.no_grad()
    def sample(self, prefixes: Sequence[HistoryPrefix], rng: np.random.Generator) -> np.ndarray:
        if self.kind == "random":
            return rng.integers(self.n_items, size=len(prefixes))
        return act(self.action_values(self.encode(prefixes)), "sample", rng=rng)

    def policy_parameters(self):
        return list(self.policy.parameters())

    def discriminator_parameters(self):
        """Discriminator side: encoder, shared trunk, discriminator readout."""
        return [*self.encoder.parameters(), *self.reward.trunk.parameters(), *self.reward.discrim.parameters()]

    def reward_parameters(self):
        return list(self.reward.reward.parameters())
