"""Training loop, evaluation, intervention experiments and checkpoints.

Checkpoint layout (``torch.save`` dict):

* ``config``: the ModelConfig as a plain dict;
* ``model``: named parameter arrays (state dict);
* ``optimizer``: Adam state for the ``base`` and ``new`` groups;
* ``rng``: byte state of the run's random stream;
* ``epoch``: number of completed epochs;
* ``curve`` / ``epochs`` / ``intervention_counts``: history so far.

Resuming restores all of the above, so continuing from epoch e reproduces
an uninterrupted run exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import torch

from .core import EOS, PAD, ModelConfig, MultimodalSample, check_config, seeded_rng
from .latent import InterventionPolicy
from .metrics import ClassificationReport, classification_report, generation_report
from .model import Batch, MuVaC, collate

log = logging.getLogger(__name__)

DO_F_SEED_OFFSET = 7919


@dataclass
class TrainResult:
    model: MuVaC
    optimizer: torch.optim.Optimizer
    rng: torch.Generator
    epoch: int = 0
    curve: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    intervention_counts: dict = field(default_factory=lambda: {"generated": 0,
                                                               "ground_truth": 0})


def run_id(cfg: ModelConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha1(blob).hexdigest()[:12]


def make_optimizer(model: MuVaC) -> torch.optim.Adam:
    groups = model.parameter_groups()
    return torch.optim.Adam([
        {"params": groups["base"], "lr": model.cfg.lr_base, "name": "base"},
        {"params": groups["new"], "lr": model.cfg.lr_new, "name": "new"},
    ])


def strip(row: Sequence[int]) -> list[int]:
    """Content tokens of a BOS ... EOS row."""
    out = []
    for t in list(row)[1:]:
        if t in (EOS, PAD):
            break
        out.append(t)
    return out


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(state: TrainResult, path: str | Path) -> None:
    torch.save({
        "config": state.model.cfg.to_dict(),
        "model": state.model.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "rng": state.rng.get_state(),
        "epoch": state.epoch,
        "curve": state.curve,
        "epochs": state.epochs,
        "intervention_counts": state.intervention_counts,
    }, path)


def load_checkpoint(path: str | Path, dtype: torch.dtype = torch.float32) -> TrainResult:
    blob = torch.load(path, weights_only=False)
    cfg = check_config(ModelConfig(**blob["config"]))
    model = MuVaC(cfg, seeded_rng(cfg.seed)).to(dtype)
    model.load_state_dict(blob["model"])
    optimizer = make_optimizer(model)
    optimizer.load_state_dict(blob["optimizer"])
    rng = torch.Generator()
    rng.set_state(blob["rng"])
    return TrainResult(model, optimizer, rng, blob["epoch"], blob["curve"], blob["epochs"],
                       blob["intervention_counts"])


# -- evaluation ----------------------------------------------------------------


def evaluate(model: MuVaC, batch: Batch, mode: str = "normal",
             noise_seed: Optional[int] = None, explanations=None) -> dict:
    """Detection and generation metrics for one inference mode."""
    model.eval()
    rng = seeded_rng(model.cfg.seed + DO_F_SEED_OFFSET if noise_seed is None else noise_seed)
    probs, expl, _ = model.infer(batch, mode, rng, explanations=explanations)
    preds = probs.argmax(-1).tolist()
    out = {"classification": classification_report(preds, batch.labels.tolist()).to_dict(),
           "predictions": preds}
    if batch.expl is not None:
        refs = [strip(r) for r in batch.expl.tolist()]
        cands = [strip(r) for r in expl.tolist()]
        out["generation"] = generation_report(cands, refs).to_dict()
        with torch.no_grad():
            M = model.fuse(batch)
            correct, total = model.decoder.token_accuracy(M, batch.expl, batch.text_mask)
        out["token_accuracy"] = correct / total
    return out


def run_intervention_experiment(model: MuVaC, samples: Sequence[MultimodalSample],
                                noise_seed: Optional[int] = None) -> dict[str, ClassificationReport]:
    """Detection reports under normal inference, do(E) and do(F) with one shared noise seed."""
    if any(len(s.gt_explanation) < 2 for s in samples):
        raise ValueError("do(E) needs ground-truth explanations")
    dtype = next(model.parameters()).dtype
    batch = collate(samples, dtype)
    return {mode: ClassificationReport(**evaluate(model, batch, mode, noise_seed)["classification"])
            for mode in ("normal", "do_E", "do_F")}


# -- training ------------------------------------------------------------------


def _dump_bad_batch(batch: Batch, out_dir: Optional[Path], losses: dict) -> str:
    where = ""
    if out_dir is not None:
        path = Path(out_dir) / "nan_batch.pt"
        torch.save({"batch": batch, "losses": losses}, path)
        where = f"; batch dumped to {path}"
    return f"non-finite loss {losses} on samples {batch.ids}{where}"


def train(cfg: ModelConfig, samples: Sequence[MultimodalSample],
          out_dir: Optional[str | Path] = None, resume: Optional[str | Path] = None,
          dtype: torch.dtype = torch.float32, until_epoch: Optional[int] = None,
          eval_each_epoch: bool = True) -> TrainResult:
    """Adam on L = L_cls + L_exp with two learning-rate groups.

    Writes ``checkpoint_epoch{e}.pt`` and ``checkpoint_last.pt`` per epoch
    when ``out_dir`` is given.  ``until_epoch`` stops early (for resume tests).
    """
    check_config(cfg)
    out_dir = None if out_dir is None else Path(out_dir)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        state = load_checkpoint(resume, dtype)
        if state.model.cfg != cfg:
            log.warning("resuming with the checkpoint's config, not the one passed in")
        cfg = state.model.cfg
    else:
        rng = seeded_rng(cfg.seed)
        model = MuVaC(cfg, rng).to(dtype)
        state = TrainResult(model, make_optimizer(model), rng)
    model, optimizer, rng = state.model, state.optimizer, state.rng
    data = collate(samples, dtype)
    policy = InterventionPolicy(cfg.epsilon, "train_mask")
    n = len(data)
    last = cfg.epochs if until_epoch is None else min(until_epoch, cfg.epochs)

    for epoch in range(state.epoch, last):
        model.train()
        order = torch.randperm(n, generator=rng)
        cached = None
        if cfg.cache_generated:
            with torch.no_grad():
                cached = model.generate(model.fuse(data), data.text_mask)
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            batch = data.subset(idx)
            generated = None if cached is None else cached[idx]
            losses, info = model.total_loss(batch, rng, policy, generated=generated)
            row = losses.as_floats()
            if not all(map(lambda v: v == v and abs(v) != float("inf"), row.values())):
                raise FloatingPointError(_dump_bad_batch(batch, out_dir, row))
            optimizer.zero_grad()
            losses.total.backward()
            optimizer.step()
            n_gt = int(info.used_ground_truth.sum())
            state.intervention_counts["ground_truth"] += n_gt
            state.intervention_counts["generated"] += len(batch) - n_gt
            state.curve.append({"epoch": epoch, "step": step, **row, "ground_truth_used": n_gt})
        state.epoch = epoch + 1
        summary = {"epoch": epoch,
                   "mean_total": sum(r["total"] for r in state.curve if r["epoch"] == epoch)
                   / max(1, sum(1 for r in state.curve if r["epoch"] == epoch))}
        if eval_each_epoch:
            ev = evaluate(model, data)
            summary["train_weighted_f1"] = ev["classification"]["weighted_f1"]
            summary["train_token_accuracy"] = ev["token_accuracy"]
        state.epochs.append(summary)
        log.info("epoch %d %s", epoch, summary)
        if out_dir is not None:
            save_checkpoint(state, out_dir / f"checkpoint_epoch{epoch + 1}.pt")
            save_checkpoint(state, out_dir / "checkpoint_last.pt")
    return state


def experiment_report(state: TrainResult, train_samples: Sequence[MultimodalSample],
                      eval_samples: Optional[Sequence[MultimodalSample]] = None,
                      noise_seed: Optional[int] = None) -> dict:
    """Everything a run produced, as one JSON-serialisable document."""
    model = state.model
    dtype = next(model.parameters()).dtype
    eval_samples = train_samples if eval_samples is None else eval_samples
    batch = collate(eval_samples, dtype)
    normal = evaluate(model, batch, "normal", noise_seed)
    interventions = {mode: evaluate(model, batch, mode, noise_seed)["classification"]
                     for mode in ("normal", "do_E", "do_F")}
    return {
        "run_id": run_id(model.cfg),
        "config": model.cfg.to_dict(),
        "classification": normal["classification"],
        "generation": normal["generation"],
        "token_accuracy": normal["token_accuracy"],
        "interventions": interventions,
        "loss_curve": state.curve,
        "epochs": state.epochs,
        "intervention_counts": state.intervention_counts,
    }


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True))
