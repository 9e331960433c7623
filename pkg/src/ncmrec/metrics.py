"""Top-k ranking metrics and simulator click-through rate."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class RankingRecord:
    ranked: tuple[int, ...]
    truth: int
    feedback: int = 1  # 1 click, 2 purchase

    def __post_init__(self):
        if len(set(self.ranked)) != len(self.ranked):
            raise MetricError("ranked list contains duplicate ids")

    def rank_of_truth(self) -> int | None:
        """1-based rank, or None when absent."""
        try:
            return self.ranked.index(self.truth) + 1
        except ValueError:
            return None


def _check(records: Sequence[RankingRecord], k: int):
    if k < 1:
        raise MetricError("k must be >= 1")
    if not records:
        raise MetricError("no records to score")
    for r in records:
        if len(r.ranked) < k:
            raise MetricError(f"ranked list of length {len(r.ranked)} shorter than k={k}")


def hits(records: Sequence[RankingRecord], k: int) -> np.ndarray:
    _check(records, k)
    return np.array([float(r.truth in r.ranked[:k]) for r in records])


def gains(records: Sequence[RankingRecord], k: int) -> np.ndarray:
    _check(records, k)
    out = []
    for r in records:
        rank = r.rank_of_truth()
        out.append(1.0 / math.log2(rank + 1) if rank is not None and rank <= k else 0.0)
    return np.array(out)


def hit_ratio_at_k(records: Sequence[RankingRecord], k: int) -> float:
    return float(hits(records, k).mean())


def ndcg_at_k(records: Sequence[RankingRecord], k: int) -> float:
    """Binary relevance with a single relevant item, so the ideal DCG is 1."""
    return float(gains(records, k).mean())


def ctr(episode_reward: float, episode_length: int) -> float:
    if episode_length < 1:
        raise MetricError("episode length must be >= 1")
    if not 0 <= episode_reward <= 10 * episode_length:
        raise MetricError(f"episode reward {episode_reward} outside [0, {10 * episode_length}]")
    return episode_reward / (10.0 * episode_length)


def partition_by_feedback(records: Iterable[RankingRecord]) -> dict[str, list[RankingRecord]]:
    names = {1: "click", 2: "purchase"}
    out: dict[str, list[RankingRecord]] = {"click": [], "purchase": []}
    for r in records:
        out[names[r.feedback]].append(r)
    return out


def mean_and_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float(v.mean()), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def welch_t_test(a, b) -> tuple[float, float]:
    """Two-sided t-test on per-session metric samples; returns (t, p)."""
    from scipy import stats

    res = stats.ttest_ind(np.asarray(a, float), np.asarray(b, float), equal_var=False)
    return float(res.statistic), float(res.pvalue)
