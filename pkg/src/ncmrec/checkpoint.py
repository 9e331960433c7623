"""Versioned checkpoint bundles: model parameters, config and RNG positions."""

from __future__ import annotations

import io
from pathlib import Path

import torch

from ncmrec.config import RunConfig
from ncmrec.model import NCMRecommender

FORMAT = "ncmrec-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_bundle(model: NCMRecommender, config: RunConfig, trainer=None, iteration: int = -1) -> dict:
    bundle = {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "n_items": model.n_items,
        "config": config.to_text(),
        "iteration": iteration,
        "model": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "torch_rng": torch.get_rng_state(),
    }
    if trainer is not None:
        bundle["numpy_rng"] = trainer.rng.bit_generator.state
        bundle["optimizers"] = {
            name: opt.state_dict()
            for name, opt in (("disc", trainer.opt_disc), ("gen", trainer.opt_gen), ("actor", trainer.opt_actor), ("critic", trainer.opt_critic))
            if opt is not None
        }
    return bundle


def save_checkpoint(path, model: NCMRecommender, config: RunConfig, trainer=None, iteration: int = -1) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(checkpoint_bundle(model, config, trainer, iteration), buf)
    path.write_bytes(buf.getvalue())
    return path


def read_bundle(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} not found")
    try:
        bundle = torch.load(path, weights_only=False)
    except Exception as exc:  # torch raises a zoo of unpickling errors
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    if not isinstance(bundle, dict) or bundle.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not an ncmrec checkpoint")
    if bundle.get("version") != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {bundle.get('version')} unsupported (expected {VERSION})")
    return bundle


def load_checkpoint(path) -> tuple[NCMRecommender, RunConfig, dict]:
    """Rebuild the model; returns (model, config, bundle)."""
    bundle = read_bundle(path)
    config = RunConfig.from_text(bundle["config"])
    model = NCMRecommender(bundle["n_items"], config, bundle["kind"])
    try:
        model.load_state_dict(bundle["model"])
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameters do not match the stored config ({exc})") from exc
    return model, config, bundle


def restore_trainer(trainer, bundle: dict):
    """Put a freshly built trainer back at the saved parameters and stream positions."""
    trainer.model.load_state_dict(bundle["model"])
    if "numpy_rng" in bundle:
        trainer.rng.bit_generator.state = bundle["numpy_rng"]
    for name, state in bundle.get("optimizers", {}).items():
        opt = getattr(trainer, f"opt_{name}")
        if opt is not None:
            opt.load_state_dict(state)
    torch.set_rng_state(bundle["torch_rng"])
