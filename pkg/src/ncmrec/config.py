"""Flat run configuration: ``key = value`` text files and ``--key value`` flags."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

OPTIMIZERS = ("reinforce", "td", "ppo")
ENVIRONMENTS = ("replay", "simulator")
REWARD_MODES = ("gumbel", "softmax")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # optimization (reference defaults)
    gamma: float = 0.7
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    batch_size: int = 256
    window: int = 10
    gae_lambda: float = 0.97
    clip_eps: float = 0.2
    reward_temperature: float = 0.2
    action_temperature: float = 0.2
    # encoder / heads
    embedding_dim: int = 50
    heads: int = 1
    blocks: int = 1
    embedding_std: float = 0.02
    hidden: int = 512
    reward_hidden: int = 64
    # alternating loop sizes
    iterations: int = 100
    disc_steps: int = 5
    policy_steps: int = 4
    episodes_per_iteration: int = 100
    ppo_epochs: int = 4
    # variants
    optimizer: str = "ppo"
    env: str = "simulator"
    reward_mode: str = "gumbel"
    td_supervised: bool = False
    td_joint_policy: bool = False
    additive_feedback: bool = False
    # simulator
    n_items: int = 30
    episode_length: int = 10
    observational_episodes: int = 500
    expert_prob: float = 0.5
    online_feedback: bool = True
    # data / io / evaluation
    dataset: str = ""
    test_fraction: float = 0.1
    negatives: int = 1
    eval_episodes: int = 200
    eval_every: int = 10
    checkpoint_every: int = 0
    record_time: bool = False
    output_dir: str = "runs"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for f in fields(self):
            value = getattr(self, f.name)
            want = _TYPES[f.name]
            if want is float and isinstance(value, int) and not isinstance(value, bool):
                setattr(self, f.name, float(value))
                continue
            if not isinstance(value, want) or (want is int and isinstance(value, bool)):
                raise ConfigError(f"{f.name}: expected {want.__name__}, got {value!r}")
        for name, ok, rule in _RANGES:
            if not ok(getattr(self, name)):
                raise ConfigError(f"{name} must be {rule}; got {getattr(self, name)!r}")
        if self.embedding_dim % self.heads:
            raise ConfigError(f"embedding_dim {self.embedding_dim} must be divisible by heads {self.heads}")
        if not 0 <= self.expert_prob <= 1:
            raise ConfigError("expert_prob must lie in [0, 1]")
        _choice("optimizer", self.optimizer, OPTIMIZERS)
        _choice("env", self.env, ENVIRONMENTS)
        _choice("reward_mode", self.reward_mode, REWARD_MODES)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {format_value(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key = key.strip()
            values[key] = parse_value(key, value.strip())
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: dict[str, Any]) -> "RunConfig":
        unknown = set(values) - set(_TYPES)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())


_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}

_positive = (lambda v: v > 0, "positive")
_at_least_one = (lambda v: v >= 1, ">= 1")
_non_negative = (lambda v: v >= 0, ">= 0")
_RANGES = [
    ("gamma", lambda v: 0 < v <= 1, "in (0, 1]"),
    ("gae_lambda", lambda v: 0 <= v <= 1, "in [0, 1]"),
    ("test_fraction", lambda v: 0 <= v < 1, "in [0, 1)"),
    *((n, *_positive) for n in ("actor_lr", "critic_lr", "clip_eps", "reward_temperature", "action_temperature", "embedding_std")),
    *((n, *_at_least_one) for n in ("batch_size", "window", "embedding_dim", "heads", "blocks", "hidden", "reward_hidden", "n_items", "episode_length", "eval_episodes", "ppo_epochs")),
    *((n, *_non_negative) for n in ("iterations", "disc_steps", "policy_steps", "episodes_per_iteration", "observational_episodes", "negatives", "eval_every", "checkpoint_every", "seed")),
]


def _choice(name, value, options):
    if value not in options:
        raise ConfigError(f"{name} must be one of {', '.join(options)}; got {value!r}")


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def parse_value(key: str, text: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key: {key}")
    want = _TYPES[key]
    try:
        if want is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if want is int:
            return int(text)
        if want is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {want.__name__}") from None
