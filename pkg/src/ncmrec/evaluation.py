"""Running a recommender against the replay log or the simulator and scoring it."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ncmrec.data import SessionDataset, replay_transitions
from ncmrec.encoder import HistoryPrefix
from ncmrec.metrics import RankingRecord, ctr, hit_ratio_at_k, mean_and_stderr, ndcg_at_k, partition_by_feedback
from ncmrec.simulator import UserSimulator, feedback_class

EVAL_SEED_OFFSET = 7_919_000


@dataclass
class EpisodeBatch:
    """Flattened steps of several simulator episodes."""

    prefixes: list[HistoryPrefix] = field(default_factory=list)
    next_prefixes: list[HistoryPrefix] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    rewards: list[int] = field(default_factory=list)  # simulator integers 0..10
    episode: list[int] = field(default_factory=list)
    terminal: list[bool] = field(default_factory=list)
    episode_ctr: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.actions)


def simulate_episodes(model, sim: UserSimulator, seeds, rng: np.random.Generator | None, greedy: bool, window: int) -> EpisodeBatch:
    """Play one episode per seed, all in lockstep so the model runs batched."""
    states = [sim.reset(int(s)) for s in seeds]
    prefixes = [HistoryPrefix() for _ in seeds]
    active = list(range(len(seeds)))
    out = EpisodeBatch()
    per_episode: dict[int, list[int]] = {i: [] for i in active}
    while active:
        batch = [prefixes[i] for i in active]
        if greedy:
            if model.kind == "random":
                actions = rng.integers(sim.n_items, size=len(batch))
            else:
                actions = model.rank(batch, 1)[:, 0]
        else:
            actions = model.sample(batch, rng)
        still = []
        for i, a in zip(active, actions):
            a = int(a)
            r, states[i], done = sim.step(states[i], a)
            nxt = prefixes[i].extend(a, int(feedback_class(r) > 0)).window(window)
            per_episode[i].append(len(out))
            out.prefixes.append(prefixes[i])
            out.next_prefixes.append(nxt)
            out.actions.append(a)
            out.rewards.append(r)
            out.episode.append(i)
            out.terminal.append(done)
            prefixes[i] = nxt
            if not done:
                still.append(i)
        active = still
    # regroup so each episode's steps are contiguous
    order = [j for i in range(len(seeds)) for j in per_episode[i]]
    for name in ("prefixes", "next_prefixes", "actions", "rewards", "episode", "terminal"):
        values = getattr(out, name)
        setattr(out, name, [values[j] for j in order])
    out.episode_ctr = [ctr(s.episode_reward, s.step) for s in states]
    return out


def evaluation_seeds(seed: int, episodes: int) -> list[int]:
    return [EVAL_SEED_OFFSET + 1000 * seed + e for e in range(episodes)]


def evaluate_simulator(model, sim: UserSimulator, episodes: int, seed: int, window: int, greedy: bool = False) -> dict:
    """Mean CTR over ``episodes`` seeded users.

    By default the agent acts as it does in training, drawing each action from
    its Gumbel-max policy under a seeded stream; ``greedy`` takes the top-1.
    """
    rng = np.random.default_rng([seed, 53])
    batch = simulate_episodes(model, sim, evaluation_seeds(seed, episodes), rng, greedy=greedy, window=window)
    mean, se = mean_and_stderr(batch.episode_ctr)
    return {"ctr": mean, "ctr_stderr": se, "episode_ctr": batch.episode_ctr}


def ranking_records(model, dataset: SessionDataset, split: str, window: int, k: int, seed: int = 0) -> list[RankingRecord]:
    """Full-catalog top-k ranking for every logged step of the split."""
    sessions = dataset.by_split(split)
    if not sessions:
        return []
    tr = replay_transitions(dataset, sessions, window)
    rng = np.random.default_rng([seed, 61])
    records = []
    chunk = 512
    for start in range(0, len(tr), chunk):
        ranked = model.rank(tr.prefixes[start : start + chunk], k, rng=rng)
        for row, item, fb in zip(ranked, tr.items[start : start + chunk], tr.feedback[start : start + chunk]):
            records.append(RankingRecord(tuple(int(x) for x in row), int(item), int(fb)))
    return records


def evaluate_replay(model, dataset: SessionDataset, split: str, window: int, ks=(5, 10), seed: int = 0) -> dict:
    """HR@k and NDCG@k overall and per feedback class."""
    records = ranking_records(model, dataset, split, window, max(ks), seed)
    report: dict = {"records": len(records)}
    groups = {"all": records, **partition_by_feedback(records)}
    for name, recs in groups.items():
        report[name] = {"count": len(recs)}
        if not recs:
            continue
        for k in ks:
            report[name][f"hr@{k}"] = hit_ratio_at_k(recs, k)
            report[name][f"ndcg@{k}"] = ndcg_at_k(recs, k)
    return report
