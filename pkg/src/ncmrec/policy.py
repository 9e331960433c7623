"""Scoring agent with a Gumbel-softmax action distribution."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ncmrec.encoder import DTYPE
from ncmrec.scm import gumbel_noise


class PolicyNet(nn.Module):
    """``h(s, a) = softplus(w^T relu(W [s; a] + b))`` over the whole catalog.

    The sampling law of ``argmax(log h + g)`` is ``h / sum(h)`` whatever the
    temperature, so ``log_prob`` uses that closed form.
    """

    def __init__(self, state_dim: int, action_dim: int, hidden: int = 512, temperature: float = 0.2, seed: int = 0):
        super().__init__()
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.temperature = temperature
        g = torch.Generator().manual_seed(seed)
        self.w_state = nn.Parameter(torch.empty(hidden, state_dim, dtype=DTYPE))
        self.w_action = nn.Parameter(torch.empty(hidden, action_dim, dtype=DTYPE))
        self.b = nn.Parameter(torch.zeros(hidden, dtype=DTYPE))
        self.w_out = nn.Parameter(torch.empty(hidden, dtype=DTYPE))
        with torch.no_grad():
            bound = 1.0 / math.sqrt(state_dim + action_dim)
            self.w_state.uniform_(-bound, bound, generator=g)
            self.w_action.uniform_(-bound, bound, generator=g)
            self.w_out.uniform_(-1.0 / math.sqrt(hidden), 1.0 / math.sqrt(hidden), generator=g)

    def preactivation(self, s: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        """``w^T relu(W [s; a_i] + b)`` for every catalog row, ``(batch, |A|)``."""
        hs = s @ self.w_state.T
        ha = actions @ self.w_action.T
        return torch.relu(hs.unsqueeze(-2) + ha + self.b) @ self.w_out

    def scores(self, s, actions):
        return F.softplus(self.preactivation(s, actions))

    def log_scores(self, s, actions):
        x = self.preactivation(s, actions)
        # log(softplus(x)), stable for very negative x
        return torch.where(x < -30, x, torch.log(F.softplus(x)))

    def log_prob(self, s, actions):
        return torch.log_softmax(self.log_scores(s, actions), dim=-1)

    def distribution(self, s, actions, noise: torch.Tensor) -> torch.Tensor:
        return policy_distribution(self.log_scores(s, actions), noise, self.temperature)


def score_action(s: torch.Tensor, a: int, policy: PolicyNet, actions: torch.Tensor) -> torch.Tensor:
    return policy.scores(s, actions[a : a + 1])[..., 0]


def policy_distribution(log_h: torch.Tensor, noise: torch.Tensor, temperature: float) -> torch.Tensor:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return torch.softmax((log_h + noise) / temperature, dim=-1)


def top_k(values: np.ndarray | torch.Tensor, k: int) -> np.ndarray:
    """Ranked ids of the ``k`` largest values per row, ties to the lower id."""
    v = values.detach().numpy() if torch.is_tensor(values) else np.asarray(values)
    m = v.shape[-1]
    if not 1 <= k <= m:
        raise ValueError(f"k={k} outside 1..{m}")
    # stable sort on the negation keeps lower ids first among equals
    return np.argsort(-v, axis=-1, kind="stable")[..., :k]


def act(values: torch.Tensor, mode: str = "sample", k: int = 1, rng: np.random.Generator | None = None):
    """Pick actions from per-action log-scores.

    ``sample`` takes the argmax under fresh Gumbel noise (an exact draw from
    ``softmax(values)``); ``top_k`` ranks under zero noise.
    """
    if mode == "top_k":
        return top_k(values, k)
    if mode != "sample":
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        raise ValueError("sample mode needs a generator")
    v = values.detach().numpy()
    return np.argmax(v + gumbel_noise(rng, v.shape), axis=-1)
