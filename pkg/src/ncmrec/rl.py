"""Return, advantage and loss computations for the three optimizer kinds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ncmrec.encoder import DTYPE


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    """``V_t = D_t + gamma * V_{t+1}`` with ``V_T = 0``."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("empty trajectory")
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def gae_advantages(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates.

    ``values`` holds ``V(s_t)`` for each step and may carry one extra entry for
    the state after the last step; it is treated as 0 when absent (terminal).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    T = len(rewards)
    if T == 0:
        raise ValueError("empty trajectory")
    if len(values) == T:
        values = np.append(values, 0.0)
    elif len(values) != T + 1:
        raise ValueError("values must have length T or T + 1")
    delta = rewards + gamma * values[1:] - values[:-1]
    adv = np.empty(T)
    acc = 0.0
    for t in range(T - 1, -1, -1):
        acc = delta[t] + gamma * lam * acc
        adv[t] = acc
    return adv


def ppo_clip_objective(ratios: torch.Tensor, advantages: torch.Tensor, eps: float) -> torch.Tensor:
    """Mean of ``min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)``."""
    if torch.any(ratios <= 0):
        raise ValueError("probability ratios must be positive")
    return torch.minimum(ratios * advantages, ratios.clamp(1.0 - eps, 1.0 + eps) * advantages).mean()


def reinforce_surrogate(log_probs: torch.Tensor, returns: torch.Tensor, n_trajectories: int) -> torch.Tensor:
    """Scalar whose gradient is ``sum_t V_t grad log pi(a_t|s_t)`` averaged per trajectory."""
    if not torch.all(torch.isfinite(log_probs)):
        raise FloatingPointError("chosen action has zero probability")
    return (returns.detach() * log_probs).sum() / n_trajectories


def reinforce_gradient(params, log_probs: torch.Tensor, returns: torch.Tensor, n_trajectories: int):
    """Ascent direction for the policy parameters."""
    params = list(params)
    return torch.autograd.grad(reinforce_surrogate(log_probs, returns, n_trajectories), params, allow_unused=True)


@dataclass
class Transitions:
    states: torch.Tensor
    actions: torch.Tensor
    rewards: torch.Tensor
    next_states: torch.Tensor
    terminal: torch.Tensor  # bool


def td_loss(batch: Transitions, q_fn, gamma: float) -> torch.Tensor:
    """Mean squared TD error against ``D + gamma * max_a' Q(s', a')``.

    ``q_fn(states)`` returns action values for the whole catalog. The
    bootstrap target is held fixed and dropped on terminal transitions.
    """
    q = q_fn(batch.states).gather(-1, batch.actions.unsqueeze(-1)).squeeze(-1)
    with torch.no_grad():
        nxt = q_fn(batch.next_states).max(dim=-1).values
        target = batch.rewards + gamma * torch.where(batch.terminal, torch.zeros_like(nxt), nxt)
    return ((target - q) ** 2).mean()


def td_update(batch: Transitions, q_fn, gamma: float, optimizer: torch.optim.Optimizer | None = None) -> float:
    """One TD step; gradients are left on the parameters, stepped if ``optimizer``."""
    if optimizer is not None:
        optimizer.zero_grad()
    loss = td_loss(batch, q_fn, gamma)
    loss.backward()
    if optimizer is not None:
        optimizer.step()
    return loss.item()


class Critic(nn.Module):
    """Two-layer ReLU network for ``V(s, a)`` over the catalog or ``V(s)``."""

    def __init__(self, state_dim: int, action_dim: int = 0, hidden: int = 512, seed: int = 0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.action_dim = action_dim
        self.w_state = nn.Parameter(torch.empty(hidden, state_dim, dtype=DTYPE))
        self.w_action = nn.Parameter(torch.empty(hidden, action_dim, dtype=DTYPE)) if action_dim else None
        self.b1 = nn.Parameter(torch.zeros(hidden, dtype=DTYPE))
        self.w2 = nn.Parameter(torch.empty(hidden, dtype=DTYPE))
        self.b2 = nn.Parameter(torch.zeros((), dtype=DTYPE))
        with torch.no_grad():
            bound = 1.0 / math.sqrt(state_dim + action_dim)
            self.w_state.uniform_(-bound, bound, generator=g)
            if self.w_action is not None:
                self.w_action.uniform_(-bound, bound, generator=g)
            self.w2.uniform_(-1.0 / math.sqrt(hidden), 1.0 / math.sqrt(hidden), generator=g)

    def forward(self, s: torch.Tensor, actions: torch.Tensor | None = None) -> torch.Tensor:
        h = s @ self.w_state.T + self.b1
        if self.w_action is not None:
            h = h.unsqueeze(-2) + actions @ self.w_action.T
        return torch.relu(h) @ self.w2 + self.b2
