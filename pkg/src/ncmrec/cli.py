"""Command line: prepare-data, train, evaluate, verify-consistency, report.

Training flags mirror ``RunConfig`` keys (``--gamma 0.7``); a ``--config``
file supplies a base that flags override. Relative output paths resolve
under ``$NCMREC_OUTPUT`` when it is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch

from ncmrec.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from ncmrec.config import OPTIMIZERS, ConfigError, RunConfig, parse_value
from ncmrec.data import DataError, build_dataset, read_events, replay_transitions, split_sessions, write_sessions
from ncmrec.evaluation import evaluate_replay, evaluate_simulator, evaluation_seeds, simulate_episodes
from ncmrec.model import NCMRecommender
from ncmrec.scm import SCMError, verify_gumbel_consistency
from ncmrec.simulator import UserSimulator, generate_synthetic_dataset
from ncmrec.trainer import MetricLog, Trainer, TrainingError

OUTPUT_ENV = "NCMREC_OUTPUT"


class UsageError(Exception):
    pass


# exit codes per error category
ERROR_CATEGORIES = (
    (UsageError, "usage", 2),
    (ConfigError, "config", 3),
    (DataError, "data", 4),
    (CheckpointError, "checkpoint", 5),
    (TrainingError, "training", 6),
    (SCMError, "scm", 7),
    (OSError, "io", 8),
)


def output_path(path: str | Path) -> Path:
    path = Path(path)
    root = os.environ.get(OUTPUT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _emit(report: dict, out: str | None):
    text = json.dumps(report, indent=2, sort_keys=True, default=float)
    if out:
        target = output_path(out)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text + "\n")
    print(text)


# ---------------------------------------------------------------- config flags


def add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="flat key = value file; flags override it")
    group = parser.add_argument_group("run configuration")
    for f in fields(RunConfig):
        names = dict.fromkeys([f"--{f.name.replace('_', '-')}", f"--{f.name}"])
        group.add_argument(*names, dest=f"cfg_{f.name}", metavar="VALUE", default=None)


def config_from_args(args) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    values = base.to_dict()
    for f in fields(RunConfig):
        raw = getattr(args, f"cfg_{f.name}")
        if raw is not None:
            values[f.name] = parse_value(f.name, raw)
    return RunConfig.from_mapping(values)


# ---------------------------------------------------------------- environments


def make_simulator(config: RunConfig) -> UserSimulator:
    return UserSimulator(config.n_items, config.episode_length, world_seed=config.seed)


def load_dataset(config: RunConfig):
    if not config.dataset:
        raise UsageError("the replay environment needs --dataset PATH")
    path = Path(config.dataset)
    if not path.is_file():
        raise DataError(f"dataset {path} not found")
    dataset = build_dataset(read_events(path.read_text()))
    return split_sessions(dataset, config.test_fraction, config.seed)


# ---------------------------------------------------------------- commands


def cmd_prepare_data(args) -> int:
    if args.synthetic:
        dataset = generate_synthetic_dataset(args.seed, args.sessions, args.catalog, args.episode_length)
    elif args.input:
        path = Path(args.input)
        if not path.is_file():
            raise DataError(f"input {path} not found")
        dataset = build_dataset(read_events(path.read_text()), args.min_count)
    else:
        raise UsageError("prepare-data needs --input PATH or --synthetic")
    out = output_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sessions(dataset, out / "sessions.csv")
    stats = dataset.statistics()
    (out / "statistics.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    config = config_from_args(args)
    out = output_path(args.out or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.to_text())
    if args.dry_run:
        print(config.to_text(), end="")
        return 0
    dataset = load_dataset(config) if config.env == "replay" else None
    sim = make_simulator(config) if config.env == "simulator" else None
    log = MetricLog(config.record_time, out / "metrics.jsonl")
    trainer = Trainer(config, config.optimizer, dataset, sim, log)

    def checkpoint(tr, it):
        save_checkpoint(out / f"checkpoint-{it + 1:05d}.pt", tr.model, tr.config, tr, it)

    trainer.run(checkpoint_fn=checkpoint)
    save_checkpoint(out / "checkpoint-final.pt", trainer.model, trainer.config, trainer, config.iterations - 1)
    (out / "metrics.jsonl").write_text(log.dumps())
    print(f"trained {config.optimizer} on {config.env} for {config.iterations} iterations; outputs in {out}")
    return 0


def cmd_evaluate(args) -> int:
    if args.baseline == "random":
        config = config_from_args(args)
        dataset = load_dataset(config) if config.env == "replay" else None
        n_items = dataset.catalog_size if dataset is not None else config.n_items
        model = NCMRecommender(n_items, config, "random")
    elif args.checkpoint:
        model, config, _ = load_checkpoint(args.checkpoint)
        overrides = {f.name: parse_value(f.name, getattr(args, f"cfg_{f.name}")) for f in fields(RunConfig) if getattr(args, f"cfg_{f.name}") is not None}
        if overrides:
            config = config.replace(**overrides)
            config.validate()
        dataset = None
    else:
        raise UsageError("evaluate needs --checkpoint PATH or --baseline random")
    env = config.env
    model.eval()
    if env == "simulator":
        res = evaluate_simulator(model, make_simulator(config), config.eval_episodes, config.seed, config.window)
        report = {"env": "simulator", "episodes": config.eval_episodes, "ctr": res["ctr"], "ctr_stderr": res["ctr_stderr"]}
    else:
        dataset = dataset or load_dataset(config)
        if dataset.catalog_size != model.n_items:
            raise CheckpointError(f"checkpoint catalog of {model.n_items} items does not match dataset catalog of {dataset.catalog_size}")
        report = {"env": "replay", "split": args.split, **evaluate_replay(model, dataset, args.split, config.window, seed=config.seed)}
    report["kind"] = model.kind
    _emit(report, args.out)
    return 0


def random_logit_pairs(trials: int, min_dim: int, max_dim: int, seed: int):
    rng = np.random.default_rng([seed, 211])
    pairs = []
    for t in range(trials):
        d = int(rng.integers(min_dim, max_dim + 1))
        p = rng.standard_normal(d) * rng.uniform(0.2, 3.0)
        q = p.copy() if t == 0 else rng.standard_normal(d) * rng.uniform(0.2, 3.0)
        pairs.append((p, q))
    return pairs


def reward_head_pairs(checkpoint: str, pairs: int, seed: int):
    """Logit pairs (factual a, counterfactual a') from a trained reward head at sampled states."""
    model, config, _ = load_checkpoint(checkpoint)
    if config.env == "simulator":
        seeds = evaluation_seeds(config.seed + 1, max(1, pairs // 5))
        prefixes = simulate_episodes(model, make_simulator(config), seeds, np.random.default_rng([seed, 223]), False, config.window).prefixes
    else:
        dataset = load_dataset(config)
        prefixes = replay_transitions(dataset, dataset.sessions, config.window).prefixes
    rng = np.random.default_rng([seed, 227])
    idx = rng.choice(len(prefixes), size=min(pairs, len(prefixes)), replace=False)
    acts = rng.integers(model.n_items, size=(len(idx), 2))
    with torch.no_grad():
        s = model.encode([prefixes[i] for i in idx])
        table = model.actions()
        lp = model.reward.logits(s, table[torch.as_tensor(acts[:, 0])]).numpy()
        lq = model.reward.logits(s, table[torch.as_tensor(acts[:, 1])]).numpy()
    return list(zip(lp, lq))


def consistency_summary(pairs, samples: int, seed: int, shared_noise: bool, keep_tables: int = 3) -> dict:
    violations = contrapositive = 0
    tables = []
    for t, (p, q) in enumerate(pairs):
        rep = verify_gumbel_consistency(p, q, samples, seed=seed * 100_003 + t, shared_noise=shared_noise)
        violations += rep.violations
        contrapositive += rep.contrapositive_violations
        if t < keep_tables:
            tables.append(rep.to_dict())
    return {"trials": len(pairs), "violations": violations, "contrapositive_violations": contrapositive, "tables": tables}


def cmd_verify_consistency(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if not 2 <= args.min_dim <= args.max_dim:
        raise UsageError("need 2 <= --min-dim <= --max-dim")
    shared = not args.contrast
    report = {
        "noise": "shared" if shared else "independent",
        "random": consistency_summary(random_logit_pairs(args.trials, args.min_dim, args.max_dim, args.seed), args.samples, args.seed, shared),
    }
    if args.checkpoint:
        report["reward_head"] = consistency_summary(reward_head_pairs(args.checkpoint, args.pairs, args.seed), args.samples, args.seed + 1, shared)
    _emit(report, args.out)
    return 0


def read_metric_log(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "metrics.jsonl"
    if not path.is_file():
        raise DataError(f"metric log {path} not found")
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if line.strip():
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: bad metric record ({exc.msg})") from exc
    return records


def cmd_report(args) -> int:
    curves = {}
    summary = {}
    for run in args.runs:
        records = read_metric_log(run)
        name = Path(run).name or str(run)
        ctr = [(r["iteration"], r["value"]) for r in records if r["metric"] == "ctr" and r["split"] == args.split]
        curves[name] = ctr
        last = {}
        for r in records:
            if r["split"] != "train":
                last[f"{r['split']}/{r['feedback_class']}/{r['metric']}"] = r["value"]
        summary[name] = {"final": last, "ctr_points": len(ctr)}
    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        from matplotlib import pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        for name, pts in curves.items():
            if pts:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, label=name)
        ax.set_xlabel("iteration")
        ax.set_ylabel("CTR")
        ax.legend()
        target = output_path(args.plot)
        target.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(target, dpi=120, bbox_inches="tight")
        plt.close(fig)
        summary["plot"] = str(target)
    _emit(summary, args.out)
    return 0


# ---------------------------------------------------------------- entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ncmrec", description="Causal recommender training and evaluation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare-data", help="filter an event log or generate a synthetic one")
    p.add_argument("--input", help="event log (session_id,timestamp,item_id,behavior or Retailrocket events.csv)")
    p.add_argument("--synthetic", action="store_true", help="roll sessions from the seeded user simulator")
    p.add_argument("--sessions", type=int, default=1000)
    p.add_argument("--catalog", type=int, default=30)
    p.add_argument("--episode-length", type=int, default=10)
    p.add_argument("--min-count", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="run the alternating training loop")
    add_config_flags(p)
    p.add_argument("--out", help="run directory (default: output_dir)")
    p.add_argument("--dry-run", action="store_true", help="validate and echo the config without training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the replay log or the simulator")
    add_config_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=["random"], help="score a uniform-random ranker instead of a checkpoint")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify-consistency", help="Monte-Carlo check of counterfactual stability")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--min-dim", type=int, default=2)
    p.add_argument("--max-dim", type=int, default=6)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--contrast", action="store_true", help="use independent noise per world (expected to violate)")
    p.add_argument("--checkpoint", help="also test the reward head of this checkpoint")
    p.add_argument("--pairs", type=int, default=50, help="(s, a, a') pairs drawn for the reward head")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_consistency)

    p = sub.add_parser("report", help="summarize metric logs, optionally plot CTR curves")
    p.add_argument("runs", nargs="+", help="run directories or metrics.jsonl files")
    p.add_argument("--split", default="eval", help="which CTR series to plot (eval or train)")
    p.add_argument("--plot", help="write a CTR-vs-iteration PNG here")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "command", None) == "train" and args.cfg_optimizer is not None and args.cfg_optimizer not in OPTIMIZERS:
            raise ConfigError(f"invalid optimizer {args.cfg_optimizer!r}; valid: {', '.join(OPTIMIZERS)}")
        return args.func(args)
    except tuple(cls for cls, _, _ in ERROR_CATEGORIES) as exc:
        for cls, name, code in ERROR_CATEGORIES:
            if isinstance(exc, cls):
                print(f"ncmrec: {name} error: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
