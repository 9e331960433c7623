"""Synthetic e-commerce user simulator with latent binary attributes.

Each user carries 11 binary attributes, expanded to an 88-dimensional latent
vector (one fixed 8-dim code per attribute value). The per-step reward is an
integer in ``0..10``::

    reward = floor(10 * sigmoid(scale * <u, v_i> + bias_i) + 0.5)

After every recommendation the latent vector loses part of its component
along the shown item (satiation), so repeating an item pays less each time.
An episode stops after ``episode_length`` steps or three zero rewards in a row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ncmrec.data import Event, Session, SessionDataset, build_dataset, EmptyDatasetError

N_ATTRIBUTES = 11
CODE_DIM = 8
LATENT_DIM = N_ATTRIBUTES * CODE_DIM
ZERO_STREAK_LIMIT = 3


def feedback_class(reward: int) -> int:
    """0 = none, 1 = click, 2 = purchase."""
    if reward >= 10:
        return 2
    if reward >= 3:
        return 1
    return 0


@dataclass(frozen=True)
class SimulatorState:
    attributes: tuple[int, ...]
    latent: np.ndarray
    step: int = 0
    zero_streak: int = 0
    episode_reward: int = 0
    done: bool = False


class UserSimulator:
    def __init__(
        self,
        n_items: int = 30,
        episode_length: int = 10,
        world_seed: int = 0,
        scale: float = 3.0,
        bias_mean: float = -2.5,
        bias_std: float = 1.0,
        satiation: float = 0.3,
    ):
        if n_items < 1 or episode_length < 1:
            raise ValueError("simulator needs at least one item and one step")
        rng = np.random.default_rng([world_seed, 4242])
        self.n_items = n_items
        self.episode_length = episode_length
        self.scale = scale
        self.satiation = satiation
        self.codes = rng.standard_normal((N_ATTRIBUTES, 2, CODE_DIM)) / math.sqrt(CODE_DIM)
        self.items = rng.standard_normal((n_items, LATENT_DIM)) * 3.0 / math.sqrt(LATENT_DIM)
        self.bias = bias_mean + bias_std * rng.standard_normal(n_items)
        self._unit = self.items / np.linalg.norm(self.items, axis=1, keepdims=True)

    def reset(self, seed: int) -> SimulatorState:
        rng = np.random.default_rng([seed, 9173])
        attrs = tuple(int(x) for x in rng.integers(0, 2, N_ATTRIBUTES))
        latent = np.concatenate([self.codes[j, a] for j, a in enumerate(attrs)])
        return SimulatorState(attrs, latent)

    def compatibility(self, latent: np.ndarray) -> np.ndarray:
        x = self.scale * (self.items @ latent) + self.bias
        return 1.0 / (1.0 + np.exp(-x))

    def step(self, state: SimulatorState, action: int) -> tuple[int, SimulatorState, bool]:
        if not 0 <= action < self.n_items:
            raise IndexError(f"action {action} outside catalog of {self.n_items}")
        if state.done:
            raise RuntimeError("episode already finished")
        c = self.compatibility(state.latent)[action]
        reward = int(math.floor(10.0 * c + 0.5))
        unit = self._unit[action]
        latent = state.latent - self.satiation * (state.latent @ unit) * unit
        zero_streak = state.zero_streak + 1 if reward == 0 else 0
        step = state.step + 1
        done = step >= self.episode_length or zero_streak >= ZERO_STREAK_LIMIT
        new = replace(
            state,
            latent=latent,
            step=step,
            zero_streak=zero_streak,
            episode_reward=state.episode_reward + reward,
            done=done,
        )
        return reward, new, done

    def expert_action(self, state: SimulatorState) -> int:
        """Greedy oracle that reads the latent vector directly."""
        return int(np.argmax(self.compatibility(state.latent)))


def simulator_reset(sim: UserSimulator, seed: int) -> SimulatorState:
    return sim.reset(seed)


def simulator_step(sim: UserSimulator, state: SimulatorState, action: int):
    return sim.step(state, action)


@dataclass
class Rollout:
    items: list[int]
    rewards: list[int]

    @property
    def classes(self) -> list[int]:
        return [feedback_class(r) for r in self.rewards]


def rollout(sim: UserSimulator, seed: int, expert_prob: float, rng: np.random.Generator) -> Rollout:
    """One episode under a per-step mixture of the expert and uniform random."""
    state = sim.reset(seed)
    items, rewards = [], []
    done = False
    while not done:
        if rng.random() < expert_prob:
            a = sim.expert_action(state)
        else:
            a = int(rng.integers(sim.n_items))
        r, state, done = sim.step(state, a)
        items.append(a)
        rewards.append(r)
    return Rollout(items, rewards)


def collect_rollouts(sim: UserSimulator, episodes: int, seed: int, expert_prob: float = 0.5) -> list[Rollout]:
    rng = np.random.default_rng([seed, 31])
    return [rollout(sim, seed * 1_000_003 + e, expert_prob, rng) for e in range(episodes)]


def generate_synthetic_dataset(seed: int, sessions: int, catalog: int, episode_length: int = 10, world_seed: int | None = None, expert_prob: float = 0.5) -> SessionDataset:
    """Session log rolled from the simulator; a full-score reward of 10 is a purchase, >= 3 a click."""
    if sessions < 1 or catalog < 1:
        raise EmptyDatasetError("synthetic generation needs sessions >= 1 and catalog >= 1")
    sim = UserSimulator(catalog, episode_length, world_seed=seed if world_seed is None else world_seed)
    pairs = []
    base = 1_600_000_000
    for sid, ro in enumerate(collect_rollouts(sim, sessions, seed, expert_prob)):
        for t, (item, r) in enumerate(zip(ro.items, ro.rewards)):
            cls = feedback_class(r)
            if cls == 0:
                continue
            pairs.append((sid, Event(base + 60 * sid + t, item, "purchase" if cls == 2 else "click")))
    return build_dataset(pairs)
