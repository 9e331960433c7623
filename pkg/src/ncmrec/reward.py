"""Gumbel reward head with its soft relaxation and the adversarial objective.

The head has one shared trunk over ``[s; a]`` and two readouts: ``reward``
emits class logits (the posterior the Gumbel-max reward samples from) and
``discrim`` scores how real a ``(s, a, feedback)`` tuple looks. A generated
feedback vector enters the discriminator as a relaxed one-hot so that the
generator side stays differentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ncmrec.encoder import DTYPE

FEEDBACK_CLASSES = ("none", "click", "purchase")
POSITIVE_CLASSES = (1, 2)


def gumbel_softmax_sample(logits: torch.Tensor, noise: torch.Tensor, temperature: float) -> torch.Tensor:
    """``softmax((logits + noise) / temperature)`` along the last axis."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if logits.shape[-1] != noise.shape[-1]:
        raise ValueError("logits and noise lengths differ")
    return torch.softmax((logits + noise) / temperature, dim=-1)


def positive_mass(r_soft: torch.Tensor, positive: int | Sequence[int] = POSITIVE_CLASSES) -> torch.Tensor:
    idx = [positive] if isinstance(positive, int) else list(positive)
    return r_soft[..., idx].sum(-1)


def clipped_reward(r_soft, positive: int | Sequence[int] = POSITIVE_CLASSES):
    """``2 * R[positive] - 0.5``; lies in ``[-0.5, 1.5]`` for simplex input.

    ``positive`` may list several classes, whose mass is pooled (pass vs.
    not-pass grouping).
    """
    if not torch.is_tensor(r_soft):
        r_soft = torch.as_tensor(np.asarray(r_soft, dtype=np.float64))
    return 2.0 * positive_mass(r_soft, positive) - 0.5


def torch_gumbel(rng: np.random.Generator, shape) -> torch.Tensor:
    from ncmrec.scm import gumbel_noise

    return torch.from_numpy(gumbel_noise(rng, shape))


class RewardHead(nn.Module):
    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        hidden: int = 64,
        n_classes: int = 3,
        temperature: float = 0.2,
        positive: Sequence[int] = POSITIVE_CLASSES,
        seed: int = 0,
    ):
        super().__init__()
        if n_classes < 2:
            raise ValueError("reward head needs at least two feedback classes")
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.n_classes = n_classes
        self.temperature = temperature
        self.positive = tuple(positive)
        g = torch.Generator().manual_seed(seed)
        self.trunk = nn.Linear(state_dim + action_dim, hidden, dtype=DTYPE)
        self.reward = nn.Linear(hidden, n_classes, dtype=DTYPE)
        self.discrim = nn.Linear(hidden, n_classes, dtype=DTYPE)
        with torch.no_grad():
            for layer in (self.trunk, self.reward, self.discrim):
                bound = 1.0 / math.sqrt(layer.in_features)
                layer.weight.uniform_(-bound, bound, generator=g)
                layer.bias.zero_()

    def features(self, s: torch.Tensor, a_emb: torch.Tensor) -> torch.Tensor:
        return torch.relu(self.trunk(torch.cat([s, a_emb], dim=-1)))

    def logits(self, s: torch.Tensor, a_emb: torch.Tensor) -> torch.Tensor:
        """Normalized log posterior over feedback classes."""
        return F.log_softmax(self.reward(self.features(s, a_emb)), dim=-1)

    def discriminate(self, s: torch.Tensor, a_emb: torch.Tensor, feedback: torch.Tensor) -> torch.Tensor:
        """``log D`` and ``log(1 - D)`` for a (soft) one-hot feedback vector."""
        score = (self.discrim(self.features(s, a_emb)) * feedback).sum(-1)
        return F.logsigmoid(score), F.logsigmoid(-score)

    def soft_feedback(self, logits: torch.Tensor, noise: torch.Tensor | None, mode: str = "gumbel") -> torch.Tensor:
        if mode == "gumbel":
            return gumbel_softmax_sample(logits, noise, self.temperature)
        if mode == "softmax":
            return torch.softmax(logits, dim=-1)
        raise ValueError(f"unknown reward mode {mode!r}")

    def reward_signal(self, s, a_emb, noise=None, mode: str = "gumbel") -> torch.Tensor:
        """Scalar per-step reward handed to the agent."""
        return clipped_reward(self.soft_feedback(self.logits(s, a_emb), noise, mode), self.positive)


def reward_logits(s: torch.Tensor, a: int, head: RewardHead, action_table: torch.Tensor) -> torch.Tensor:
    if not 0 <= a < action_table.shape[0]:
        raise IndexError(f"action {a} outside catalog of {action_table.shape[0]}")
    return head.logits(s, action_table[a])


@dataclass
class DiscriminatorBatch:
    """Real ``(s, a, class)`` records; the generated side reuses the same
    ``(s, a)`` with feedback resampled from the head under ``noise``."""

    states: torch.Tensor
    actions: torch.Tensor
    feedback: torch.Tensor
    noise: torch.Tensor

    def __post_init__(self):
        if self.states.shape[0] == 0:
            raise ValueError("discriminator batch is empty")


@dataclass
class AdversarialLosses:
    discriminator: torch.Tensor  # negated objective, minimized by encoder, trunk and discriminator readout
    generator: torch.Tensor  # E log(1 - D(generated)), minimized by the reward readout
    objective: float
    accuracy: float


def adversarial_losses(batch: DiscriminatorBatch, head: RewardHead, action_table: torch.Tensor, mode: str = "gumbel") -> AdversarialLosses:
    """Both sides of the min-max objective.

    ``objective = E log D(real) + E log(1 - D(generated))``. The discriminator
    loss sees the generated sample detached; the generator loss differentiates
    through the relaxed sample only.
    """
    s, a_emb = batch.states, action_table[batch.actions]
    real = F.one_hot(batch.feedback, head.n_classes).to(DTYPE)
    logits = head.logits(s, a_emb)
    fake = head.soft_feedback(logits, batch.noise, mode)

    log_d_real, _ = head.discriminate(s, a_emb, real)
    _, log_1m_fake = head.discriminate(s, a_emb, fake.detach())
    objective = log_d_real.mean() + log_1m_fake.mean()

    # generator: discrimination readout and features are held fixed; the
    # trainer applies this gradient to the reward readout only
    feats = head.features(s, a_emb).detach()
    score_fake = (F.linear(feats, head.discrim.weight.detach(), head.discrim.bias.detach()) * fake).sum(-1)
    generator = F.logsigmoid(-score_fake).mean()

    with torch.no_grad():
        acc = 0.5 * ((log_d_real > math.log(0.5)).to(DTYPE).mean() + (log_1m_fake > math.log(0.5)).to(DTYPE).mean())
    return AdversarialLosses(-objective, generator, float(objective.detach()), float(acc))
