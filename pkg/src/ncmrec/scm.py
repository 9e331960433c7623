"""Discrete structural causal models with Gumbel-max mechanisms.

Counterfactual queries are answered by shared-noise Monte Carlo: every
mutilated copy of the model is evaluated on the *same* exogenous draw, so the
joint law of the outcomes across worlds is the tally of indicator events.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

# u is clipped into the open interval so that -log(-log(u)) stays finite.
_U_LO = np.finfo(np.float64).tiny
_U_HI = 1.0 - np.finfo(np.float64).eps


class SCMError(ValueError):
    """Invalid model description or query."""


class InestimableEvidence(SCMError):
    """The factual event was never realized in the Monte-Carlo sample."""


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard Gumbel draws ``-log(-log(u))`` with ``u ~ Unif(0, 1)``."""
    u = np.clip(rng.random(shape), _U_LO, _U_HI)
    return -np.log(-np.log(u))


def noise_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator keyed by ``(seed, *key)``.

    Keys are typically ``(node index, timestep)``; two worlds that ask for the
    same key receive bit-identical draws.
    """
    return np.random.default_rng([int(seed), *(int(k) for k in key)])


def gumbel_max_select(logits, noise) -> np.ndarray | int:
    """Index of ``argmax(logits + noise)`` along the last axis.

    Ties resolve to the lowest index. Works on single vectors and on batches.
    """
    logits = np.asarray(logits, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if logits.shape[-1:] != noise.shape[-1:] or logits.shape[-1] < 1:
        raise SCMError(
            f"logits and noise must have equal non-zero length, got "
            f"{logits.shape[-1:]} and {noise.shape[-1:]}"
        )
    if not np.all(np.isfinite(logits)):
        raise SCMError("logits must be finite")
    idx = np.argmax(logits + noise, axis=-1)
    if idx.ndim == 0:
        return int(idx)
    return idx


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


SelectionRule = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class CategoricalMechanism:
    """Logit table indexed by parent values, resolved by Gumbel-max.

    ``logits`` has shape ``(*parent_cardinalities, n_categories)``.
    """

    logits: np.ndarray
    selection_rule: SelectionRule = gumbel_max_select

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim < 1 or self.logits.shape[-1] < 1:
            raise SCMError("mechanism needs at least one category")
        if not np.all(np.isfinite(self.logits)):
            raise SCMError("mechanism logits must be finite")

    @property
    def n_categories(self) -> int:
        return self.logits.shape[-1]

    def __call__(self, parent_values: Sequence[np.ndarray], noise: np.ndarray) -> np.ndarray:
        table = self.logits[tuple(parent_values)] if parent_values else self.logits
        table = np.broadcast_to(table, noise.shape)
        return self.selection_rule(table, noise)


@dataclass
class StructuralCausalModel:
    nodes: list[str]
    parents: dict[str, list[str]]
    mechanisms: dict[str, CategoricalMechanism]
    order: list[str] = field(init=False, repr=False)

    def __post_init__(self):
        if len(set(self.nodes)) != len(self.nodes):
            raise SCMError("duplicate node names")
        for v in self.nodes:
            self.parents.setdefault(v, [])
            if v not in self.mechanisms:
                raise SCMError(f"node {v!r} has no mechanism")
            for p in self.parents[v]:
                if p not in self.nodes:
                    raise SCMError(f"node {v!r} has unknown parent {p!r}")
        self.order = self._topological_order()
        for v in self.nodes:
            mech = self.mechanisms[v]
            expected = tuple(self.cardinality(p) for p in self.parents[v])
            if mech.logits.shape[:-1] != expected:
                raise SCMError(
                    f"mechanism of {v!r} expects parent shape {mech.logits.shape[:-1]}, "
                    f"parents give {expected}"
                )

    def _topological_order(self) -> list[str]:
        order, state = [], {}

        def visit(v):
            if state.get(v) == 1:
                raise SCMError(f"parent graph has a cycle through {v!r}")
            if state.get(v) == 2:
                return
            state[v] = 1
            for p in self.parents[v]:
                visit(p)
            state[v] = 2
            order.append(v)

        for v in self.nodes:
            visit(v)
        return order

    def cardinality(self, node: str) -> int:
        return self.mechanisms[node].n_categories

    def exogenous_spec(self) -> dict[str, int]:
        """Number of uniform draws each node consumes per sample."""
        return {v: self.cardinality(v) for v in self.nodes}

    def draw_noise(self, samples: int, seed: int, world: int | None = None) -> dict[str, np.ndarray]:
        """Gumbel noise for every node.

        With ``world=None`` the stream depends only on the node, which is what
        makes the worlds of a counterfactual query share their exogenous draw.
        """
        out = {}
        for i, v in enumerate(self.nodes):
            key = (i,) if world is None else (i, 1_000_003 + world)
            out[v] = gumbel_noise(noise_stream(seed, *key), (samples, self.cardinality(v)))
        return out

    def evaluate(self, noise: Mapping[str, np.ndarray], intervention: Mapping[str, int] | None = None) -> dict[str, np.ndarray]:
        """Evaluate the (possibly mutilated) model on a fixed exogenous draw."""
        intervention = dict(intervention or {})
        n = next(iter(noise.values())).shape[0]
        values: dict[str, np.ndarray] = {}
        for v in self.order:
            if v in intervention:
                values[v] = np.full(n, int(intervention[v]), dtype=np.int64)
                continue
            pa = [values[p] for p in self.parents[v]]
            values[v] = np.asarray(self.mechanisms[v](pa, noise[v]), dtype=np.int64)
        return values

    def check_intervention(self, intervention: Mapping[str, int]):
        for var, val in intervention.items():
            if var not in self.mechanisms:
                raise SCMError(f"intervention on unknown variable {var!r}")
            if not 0 <= int(val) < self.cardinality(var):
                raise SCMError(f"intervention value {val} outside the range of {var!r}")

    # ------------------------------------------------------------------ text io

    def to_text(self) -> str:
        lines = ["# ncmrec-scm v1"]
        for v in self.nodes:
            pa = " ".join(self.parents[v])
            lines.append(f"node {v} {self.cardinality(v)}" + (f" | {pa}" if pa else ""))
        for v in self.nodes:
            table = self.mechanisms[v].logits
            for idx in itertools.product(*(range(s) for s in table.shape[:-1])):
                row = " ".join(repr(float(x)) for x in table[idx])
                key = " ".join(str(i) for i in idx)
                lines.append(f"logits {v} | {key} : {row}" if key else f"logits {v} : {row}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "StructuralCausalModel":
        nodes, parents, cards, rows = [], {}, {}, {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            head, *rest = line.split(None, 1)
            try:
                if head == "node":
                    left, _, pa = rest[0].partition("|")
                    name, card = left.split()
                    nodes.append(name)
                    cards[name] = int(card)
                    parents[name] = pa.split()
                elif head == "logits":
                    left, _, vals = rest[0].partition(":")
                    name, _, key = left.partition("|")
                    idx = tuple(int(k) for k in key.split())
                    rows[(name.strip(), idx)] = [float(x) for x in vals.split()]
                else:
                    raise ValueError(f"unknown directive {head!r}")
            except (ValueError, IndexError) as exc:
                raise SCMError(f"line {lineno}: {exc}") from None
        mechanisms = {}
        for v in nodes:
            shape = tuple(cards[p] for p in parents[v]) + (cards[v],)
            table = np.full(shape, np.nan)
            for idx in itertools.product(*(range(s) for s in shape[:-1])):
                if (v, idx) not in rows:
                    raise SCMError(f"missing logits for {v} at parents {idx}")
                table[idx] = rows[(v, idx)]
            mechanisms[v] = CategoricalMechanism(table)
        return cls(nodes, parents, mechanisms)


@dataclass
class CounterfactualQuery:
    """K interventions, one target per world, optional factual evidence.

    ``evidence`` is a list of ``(world index, variable, value)`` triples.
    """

    interventions: list[dict[str, int]]
    targets: list[str]
    evidence: list[tuple[int, str, int]] = field(default_factory=list)

    def validate(self, model: StructuralCausalModel):
        if len(self.interventions) < 1:
            raise SCMError("a counterfactual query needs K >= 1 interventions")
        if len(self.targets) != len(self.interventions):
            raise SCMError("one target per intervention is required")
        for x in self.interventions:
            model.check_intervention(x)
        for y in self.targets:
            if y not in model.mechanisms:
                raise SCMError(f"unknown target {y!r}")
        for k, var, _ in self.evidence:
            if not 0 <= k < len(self.interventions) or var not in model.mechanisms:
                raise SCMError(f"bad evidence entry {(k, var)}")


def _world_outcomes(model, query, samples, seed, shared_noise):
    shared = model.draw_noise(samples, seed) if shared_noise else None
    outs = []
    for k, x in enumerate(query.interventions):
        noise = shared if shared_noise else model.draw_noise(samples, seed, world=k)
        outs.append(model.evaluate(noise, x))
    return outs


def counterfactual_distribution(
    model: StructuralCausalModel,
    query: CounterfactualQuery,
    samples: int,
    seed: int,
    shared_noise: bool = True,
) -> np.ndarray:
    """Joint table ``P(Y_1[x_1], ..., Y_K[x_K])`` over target categories.

    Evidence, when present, conditions the table by rejection. Passing
    ``shared_noise=False`` gives each world its own exogenous draw; that breaks
    the counterfactual coupling and exists only as a contrast.
    """
    if samples < 1:
        raise SCMError("samples must be >= 1")
    query.validate(model)
    worlds = _world_outcomes(model, query, samples, seed, shared_noise)
    keep = np.ones(samples, dtype=bool)
    for k, var, val in query.evidence:
        keep &= worlds[k][var] == val
    if not keep.any():
        raise InestimableEvidence("factual evidence never realized in the sample")
    cards = tuple(model.cardinality(y) for y in query.targets)
    flat = np.ravel_multi_index(tuple(w[y][keep] for w, y in zip(worlds, query.targets)), cards)
    counts = np.bincount(flat, minlength=math.prod(cards)).reshape(cards)
    return counts / counts.sum()


def probability_of_necessity(
    model: StructuralCausalModel,
    factual: tuple[Mapping[str, int], tuple[str, int]],
    counterfactual: tuple[Mapping[str, int], tuple[str, int]],
    samples: int,
    seed: int,
    shared_noise: bool = True,
) -> float:
    """``P(Y_k[x_k] = y | Y_1[x_1] = y_1)`` from the shared-noise joint."""
    (x1, (y1_var, y1_val)), (xk, (yk_var, yk_val)) = factual, counterfactual
    query = CounterfactualQuery([dict(x1), dict(xk)], [y1_var, yk_var])
    joint = counterfactual_distribution(model, query, samples, seed, shared_noise)
    row = joint[y1_val]
    if row.sum() == 0:
        raise InestimableEvidence(f"factual event {y1_var}={y1_val} never realized")
    return float(row[yk_val] / row.sum())


def reward_scm(factual_logits, counterfactual_logits) -> StructuralCausalModel:
    """Two-action reward model: ``A -> R`` with ``R``'s logits chosen by ``A``.

    ``do(A=0)`` is the factual recommendation, ``do(A=1)`` the counterfactual.
    """
    p = np.asarray(factual_logits, dtype=np.float64)
    q = np.asarray(counterfactual_logits, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise SCMError("factual and counterfactual logits must be vectors of equal length")
    return StructuralCausalModel(
        nodes=["A", "R"],
        parents={"A": [], "R": ["A"]},
        mechanisms={
            "A": CategoricalMechanism(np.zeros(2)),
            "R": CategoricalMechanism(np.stack([p, q])),
        },
    )


@dataclass
class ConsistencyReport:
    """Outcome-pair tables; entry ``[i, j]`` pairs factual ``i`` with target ``j``."""

    antecedent: np.ndarray  # q_j/p_j <= q_i/p_i, the condition that forces PN = 0
    pn: np.ndarray  # P(R_k = j | R_1 = i)
    bound: np.ndarray  # 3 * sqrt(pn (1 - pn) / n_i)
    evidence_counts: np.ndarray
    factual_marginal: np.ndarray
    counterfactual_marginal: np.ndarray
    violations: int
    contrapositive_violations: int
    samples: int

    @property
    def antecedent_holds(self) -> bool:
        return bool(self.antecedent.any())

    @property
    def pn_estimate(self) -> np.ndarray:
        return self.pn

    @property
    def consistent(self) -> bool:
        return self.violations == 0 and self.contrapositive_violations == 0

    def to_dict(self) -> dict:
        return {
            "antecedent_holds": self.antecedent_holds,
            "consistent": self.consistent,
            "violations": self.violations,
            "contrapositive_violations": self.contrapositive_violations,
            "samples": self.samples,
            "pn_estimate": self.pn.tolist(),
            "antecedent": self.antecedent.tolist(),
            "factual_marginal": self.factual_marginal.tolist(),
            "counterfactual_marginal": self.counterfactual_marginal.tolist(),
        }


def verify_gumbel_consistency(
    factual_logits,
    counterfactual_logits,
    samples: int,
    seed: int,
    shared_noise: bool = True,
) -> ConsistencyReport:
    """Check that PN vanishes wherever the posterior-ratio condition holds.

    For an observed factual outcome ``i`` and a different target ``j``, the
    counterfactual switch ``i -> j`` must be impossible when the intervention
    raises the odds of ``j`` no more than those of ``i``:
    ``q_j / p_j <= q_i / p_i``. Both directions are tallied: pairs where the
    condition holds but PN exceeds the Monte-Carlo bound, and pairs with
    PN above the bound whose ratio fails to favour ``j``.
    """
    model = reward_scm(factual_logits, counterfactual_logits)
    if samples < 1:
        raise SCMError("samples must be >= 1")
    query = CounterfactualQuery([{"A": 0}, {"A": 1}], ["R", "R"])
    joint_counts = counterfactual_distribution(model, query, samples, seed, shared_noise) * samples
    joint_counts = np.rint(joint_counts)
    n_i = joint_counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        pn = np.where(n_i[:, None] > 0, joint_counts / n_i[:, None], 0.0)
        bound = np.where(n_i[:, None] > 0, 3.0 * np.sqrt(pn * (1.0 - pn) / np.maximum(n_i[:, None], 1)), 0.0)

    log_p = np.asarray(factual_logits, dtype=np.float64)
    log_q = np.asarray(counterfactual_logits, dtype=np.float64)
    log_p = log_p - np.logaddexp.reduce(log_p)
    log_q = log_q - np.logaddexp.reduce(log_q)
    lift = log_q - log_p
    # condition on (i, j): lift_j <= lift_i
    antecedent = lift[None, :] <= lift[:, None]
    np.fill_diagonal(antecedent, False)
    observed = n_i[:, None] > 0
    exceeds = (pn > bound) & observed
    off_diag = ~np.eye(len(lift), dtype=bool)
    violations = int(np.sum(antecedent & exceeds))
    contrapositive = int(np.sum(exceeds & off_diag & ~(lift[None, :] > lift[:, None])))
    return ConsistencyReport(
        antecedent=antecedent,
        pn=pn,
        bound=bound,
        evidence_counts=n_i,
        factual_marginal=joint_counts.sum(axis=1) / samples,
        counterfactual_marginal=joint_counts.sum(axis=0) / samples,
        violations=violations,
        contrapositive_violations=contrapositive,
        samples=samples,
    )
