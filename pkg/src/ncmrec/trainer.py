"""Alternating adversarial / reinforcement training loop.

Each iteration first fits the discriminator side (encoder, reward trunk and
discrimination readout, plus the reward readout as generator) on
observational records, then improves the agent (and critic) on trajectories
sampled from the current policy, rewarded by the Gumbel reward head.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch.nn import functional as F

from ncmrec.config import RunConfig
from ncmrec.data import SessionDataset, replay_transitions
from ncmrec.encoder import DTYPE, HistoryPrefix
from ncmrec.evaluation import EpisodeBatch, evaluate_replay, evaluate_simulator, simulate_episodes
from ncmrec.model import NCMRecommender
from ncmrec.reward import DiscriminatorBatch, adversarial_losses, torch_gumbel
from ncmrec.rl import Transitions, discounted_returns, gae_advantages, ppo_clip_objective, reinforce_surrogate, td_loss
from ncmrec.simulator import UserSimulator, collect_rollouts, feedback_class

ADDITIVE_FEEDBACK = {0: 0.0, 1: 0.2, 2: 1.0}


class TrainingError(ValueError):
    pass


class MetricLog:
    """Append-only metric records, one JSON object per line."""

    def __init__(self, record_time: bool = False, path=None):
        self.records: list[dict] = []
        self.record_time = record_time
        self.path = Path(path) if path else None
        self._t0 = time.perf_counter()

    def add(self, iteration: int, metric: str, value: float, split: str = "train", feedback_class: str = "all"):
        rec = {
            "iteration": iteration,
            "wall_clock": round(time.perf_counter() - self._t0, 3) if self.record_time else None,
            "metric": metric,
            "value": float(value),
            "split": split,
            "feedback_class": feedback_class,
        }
        self.records.append(rec)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


@dataclass
class ObservationalBuffer:
    prefixes: list[HistoryPrefix] = field(default_factory=list)
    items: list[int] = field(default_factory=list)
    classes: list[int] = field(default_factory=list)

    def add(self, prefix: HistoryPrefix, item: int, cls: int):
        self.prefixes.append(prefix)
        self.items.append(int(item))
        self.classes.append(int(cls))

    def __len__(self):
        return len(self.items)

    def sample(self, rng: np.random.Generator, n: int):
        idx = rng.integers(len(self), size=n)
        return [self.prefixes[i] for i in idx], np.array([self.items[i] for i in idx]), np.array([self.classes[i] for i in idx])


def buffer_from_rollouts(rollouts, window: int, buf: ObservationalBuffer | None = None) -> ObservationalBuffer:
    buf = buf or ObservationalBuffer()
    for ro in rollouts:
        p = HistoryPrefix()
        for item, cls in zip(ro.items, ro.classes):
            buf.add(p, item, cls)
            p = p.extend(item, int(cls > 0)).window(window)
    return buf


def buffer_from_replay(dataset: SessionDataset, sessions, window: int, negatives: int, rng: np.random.Generator) -> ObservationalBuffer:
    """Logged steps as positives plus sampled unlogged items labelled ``none``."""
    buf = ObservationalBuffer()
    tr = replay_transitions(dataset, sessions, window)
    m = dataset.catalog_size
    for prefix, item, fb in zip(tr.prefixes, tr.items, tr.feedback):
        buf.add(prefix, item, fb)
        for _ in range(negatives if m > 1 else 0):
            neg = int(rng.integers(m - 1))
            buf.add(prefix, neg + (neg >= item), 0)
    return buf


@dataclass
class Trajectories:
    """Interventional steps, contiguous per episode."""

    prefixes: list[HistoryPrefix]
    next_prefixes: list[HistoryPrefix]
    actions: np.ndarray
    feedback: np.ndarray  # observed feedback class for the proposed action, -1 if unknown
    logged: np.ndarray  # logged item on replay, -1 on the simulator
    episode: np.ndarray
    terminal: np.ndarray
    rewards: np.ndarray | None = None  # discriminator reward D per step
    episode_ctr: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.actions)

    def episodes(self):
        bounds = np.flatnonzero(np.diff(self.episode)) + 1
        return np.split(np.arange(len(self)), bounds)


class Trainer:
    def __init__(self, config: RunConfig, kind: str | None = None, dataset: SessionDataset | None = None, simulator: UserSimulator | None = None, log: MetricLog | None = None):
        kind = kind or config.optimizer
        if kind not in ("reinforce", "td", "ppo"):
            raise TrainingError(f"unknown optimizer kind {kind!r}; valid: reinforce, td, ppo")
        if config.env == "replay" and dataset is None:
            raise TrainingError("the replay environment needs a dataset")
        if config.env == "simulator" and simulator is None:
            raise TrainingError("the simulator environment needs a simulator")
        self.config = config.replace(optimizer=kind)
        self.kind = kind
        self.dataset = dataset
        self.sim = simulator
        self.log = log or MetricLog(config.record_time)
        torch.manual_seed(config.seed)
        n_items = dataset.catalog_size if config.env == "replay" else simulator.n_items
        self.model = NCMRecommender(n_items, self.config, kind)
        self.rng = np.random.default_rng([config.seed, 101])
        self.eval_count = 0

        cfg = self.config
        self.opt_disc = torch.optim.Adam(self.model.discriminator_parameters(), lr=cfg.critic_lr)
        self.opt_gen = torch.optim.Adam(self.model.reward_parameters(), lr=cfg.critic_lr)
        if kind == "td" and cfg.td_joint_policy:
            self.opt_actor = None
            self.opt_critic = torch.optim.Adam(self.model.policy_parameters(), lr=cfg.critic_lr)
        elif kind == "td":
            self.opt_actor = None
            self.opt_critic = torch.optim.Adam(self.model.q_critic.parameters(), lr=cfg.critic_lr)
        else:
            self.opt_actor = torch.optim.Adam(self.model.policy_parameters(), lr=cfg.actor_lr)
            self.opt_critic = torch.optim.Adam(self.model.v_critic.parameters(), lr=cfg.critic_lr) if kind == "ppo" else None

        if config.env == "simulator":
            rollouts = collect_rollouts(simulator, cfg.observational_episodes, cfg.seed, cfg.expert_prob)
            self.observed = buffer_from_rollouts(rollouts, cfg.window)
        else:
            self.train_sessions = dataset.by_split("train")
            if not self.train_sessions:
                raise TrainingError("dataset has no training sessions")
            self.observed = buffer_from_replay(dataset, self.train_sessions, cfg.window, cfg.negatives, self.rng)
            self.replay = replay_transitions(dataset, self.train_sessions, cfg.window)
            self._replay_episodes = np.split(np.arange(len(self.replay)), np.flatnonzero(np.diff(self.replay.episode)) + 1)

    # ------------------------------------------------------------ discriminator

    def discriminator_step(self) -> tuple[float, float]:
        cfg, model = self.config, self.model
        prefixes, items, classes = self.observed.sample(self.rng, cfg.batch_size)
        noise = torch_gumbel(self.rng, (len(items), model.reward.n_classes))
        batch = DiscriminatorBatch(model.encode(prefixes), torch.as_tensor(items), torch.as_tensor(classes), noise)
        losses = adversarial_losses(batch, model.reward, model.actions(), cfg.reward_mode)

        disc_params = model.discriminator_parameters()
        gen_params = model.reward_parameters()
        g_disc = torch.autograd.grad(losses.discriminator, disc_params, retain_graph=True)
        g_gen = torch.autograd.grad(losses.generator, gen_params)
        for p, g in zip(disc_params, g_disc):
            p.grad = g
        for p, g in zip(gen_params, g_gen):
            p.grad = g
        self.opt_disc.step()
        self.opt_gen.step()
        return losses.objective, losses.accuracy

    # ------------------------------------------------------------ trajectories

    def _reward(self, traj: Trajectories) -> np.ndarray:
        model, cfg = self.model, self.config
        with torch.no_grad():
            s = model.encode(traj.prefixes)
            noise = torch_gumbel(self.rng, (len(traj), model.reward.n_classes))
            d = model.reward.reward_signal(s, model.actions()[torch.as_tensor(traj.actions)], noise, cfg.reward_mode).numpy()
        if cfg.additive_feedback:
            d = d + np.array([ADDITIVE_FEEDBACK.get(int(c), 0.0) for c in traj.feedback])
        return d

    def sample_trajectories(self, n_episodes: int) -> Trajectories:
        cfg = self.config
        if cfg.env == "simulator":
            seeds = self.rng.integers(2**31, size=n_episodes)
            eb: EpisodeBatch = simulate_episodes(self.model, self.sim, seeds, self.rng, greedy=False, window=cfg.window)
            feedback = np.array([feedback_class(r) for r in eb.rewards])
            traj = Trajectories(
                eb.prefixes, eb.next_prefixes, np.array(eb.actions), feedback,
                np.full(len(eb), -1), np.array(eb.episode), np.array(eb.terminal, dtype=bool),
                episode_ctr=eb.episode_ctr,
            )
            if cfg.online_feedback:
                for p, a, c in zip(traj.prefixes, traj.actions, feedback):
                    self.observed.add(p, a, c)
        else:
            chosen = self.rng.choice(len(self._replay_episodes), size=min(n_episodes, len(self._replay_episodes)), replace=False)
            idx = np.concatenate([self._replay_episodes[i] for i in np.sort(chosen)])
            tr = self.replay
            prefixes = [tr.prefixes[i] for i in idx]
            actions = self.model.sample(prefixes, self.rng)
            logged = tr.items[idx]
            feedback = np.where(actions == logged, tr.feedback[idx], 0)
            traj = Trajectories(
                prefixes, [tr.next_prefixes[i] for i in idx], np.asarray(actions), feedback,
                logged, tr.episode[idx], tr.terminal[idx],
            )
        traj.rewards = self._reward(traj)
        return traj

    # ------------------------------------------------------------ policy updates

    def _states(self, prefixes):
        with torch.no_grad():
            return self.model.encode(prefixes)

    def reinforce_step(self, traj: Trajectories) -> float:
        model = self.model
        returns = np.concatenate([discounted_returns(traj.rewards[ep], self.config.gamma) for ep in traj.episodes()])
        s = self._states(traj.prefixes)
        logp = model.policy.log_prob(s, model.actions().detach())[torch.arange(len(traj)), torch.as_tensor(traj.actions)]
        n_ep = len(traj.episodes())
        loss = -reinforce_surrogate(logp, torch.as_tensor(returns), n_ep)
        self.opt_actor.zero_grad()
        loss.backward()
        self.opt_actor.step()
        return loss.item()

    def td_step(self, traj: Trajectories) -> float:
        cfg, model = self.config, self.model
        batch = Transitions(
            self._states(traj.prefixes),
            torch.as_tensor(traj.actions),
            torch.as_tensor(traj.rewards, dtype=DTYPE),
            self._states(traj.next_prefixes),
            torch.as_tensor(traj.terminal),
        )
        self.opt_critic.zero_grad()
        loss = td_loss(batch, model.q_values, cfg.gamma)
        if cfg.td_supervised and (traj.logged >= 0).any():
            mask = torch.as_tensor(traj.logged >= 0)
            q = model.q_values(batch.states[mask])
            loss = loss + F.cross_entropy(q, torch.as_tensor(traj.logged)[mask])
        loss.backward()
        self.opt_critic.step()
        return loss.item()

    def ppo_step(self, traj: Trajectories) -> float:
        cfg, model = self.config, self.model
        s = self._states(traj.prefixes)
        acts = torch.as_tensor(traj.actions)
        rows = torch.arange(len(traj))
        with torch.no_grad():
            old_logp = model.policy.log_prob(s, model.actions())[rows, acts]
            values = model.v_critic(s).numpy()
        adv, ret = [], []
        for ep in traj.episodes():
            v = values[ep]
            boot = 0.0 if traj.terminal[ep[-1]] else float(model.v_critic(self._states([traj.next_prefixes[ep[-1]]]))[0])
            a = gae_advantages(traj.rewards[ep], np.append(v, boot), cfg.gamma, cfg.gae_lambda)
            adv.append(a)
            ret.append(a + v)
        adv_t = torch.as_tensor(np.concatenate(adv))
        ret_t = torch.as_tensor(np.concatenate(ret))
        objective = 0.0
        for _ in range(cfg.ppo_epochs):
            logp = model.policy.log_prob(s, model.actions().detach())[rows, acts]
            ratio = torch.exp(logp - old_logp)
            obj = ppo_clip_objective(ratio, adv_t, cfg.clip_eps)
            self.opt_actor.zero_grad()
            (-obj).backward()
            self.opt_actor.step()
            v_loss = ((model.v_critic(s) - ret_t) ** 2).mean()
            self.opt_critic.zero_grad()
            v_loss.backward()
            self.opt_critic.step()
            objective = obj.item()
        return objective

    # ------------------------------------------------------------ loop

    def evaluate(self, iteration: int):
        cfg = self.config
        if cfg.env == "simulator":
            res = evaluate_simulator(self.model, self.sim, cfg.eval_episodes, cfg.seed, cfg.window)
            self.log.add(iteration, "ctr", res["ctr"], split="eval")
            return res
        res = evaluate_replay(self.model, self.dataset, "test", cfg.window, seed=cfg.seed)
        for cls in ("all", "click", "purchase"):
            for key, value in res[cls].items():
                if key != "count":
                    self.log.add(iteration, key, value, split="test", feedback_class=cls)
        return res

    def run(self, iterations: int | None = None, checkpoint_fn=None) -> MetricLog:
        cfg = self.config
        iterations = cfg.iterations if iterations is None else iterations
        step_fn = {"reinforce": self.reinforce_step, "td": self.td_step, "ppo": self.ppo_step}[self.kind]
        per_step = max(1, cfg.episodes_per_iteration // max(1, cfg.policy_steps))
        if cfg.env == "replay":
            per_step = cfg.batch_size
        for it in range(iterations):
            objs, accs = [], []
            for _ in range(cfg.disc_steps):
                o, a = self.discriminator_step()
                objs.append(o)
                accs.append(a)
            if objs:
                self.log.add(it, "disc_objective", np.mean(objs))
                self.log.add(it, "disc_accuracy", np.mean(accs))
            losses, rewards, ctrs = [], [], []
            for _ in range(cfg.policy_steps):
                traj = self.sample_trajectories(per_step)
                losses.append(step_fn(traj))
                rewards.append(traj.rewards.mean())
                ctrs.extend(traj.episode_ctr)
            if losses:
                self.log.add(it, f"{self.kind}_loss", np.mean(losses))
                self.log.add(it, "reward", np.mean(rewards))
            if ctrs:
                self.log.add(it, "ctr", np.mean(ctrs))
            if cfg.eval_every and (it + 1) % cfg.eval_every == 0:
                self.evaluate(it)
            if checkpoint_fn is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                checkpoint_fn(self, it)
        return self.log


def train(config: RunConfig, kind: str | None = None, dataset: SessionDataset | None = None, simulator: UserSimulator | None = None, log: MetricLog | None = None):
    """Build a trainer, run ``config.iterations`` iterations, return (model, log)."""
    trainer = Trainer(config, kind, dataset, simulator, log)
    trainer.run()
    return trainer.model, trainer.log
