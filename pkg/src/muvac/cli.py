"""Command-line entry point: ``muvac <verb> [options]``."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import click
import numpy as np

from .core import load_config, save_config
from .data import (SyntheticCorpusSpec, build_vocabulary, export_features,
                   generate_synthetic_dataset, ingest_features, load_dataset, read_matrix,
                   save_dataset, save_spec)
from .keyframes import select_keyframes
from .model import collate
from .train import (evaluate, experiment_report, load_checkpoint, run_id,
                    run_intervention_experiment, train, write_report)

CURVE_FIELDS = ("epoch", "step", "reconstruction", "kl", "exp", "total", "ground_truth_used")


def _config(config, overrides, seed):
    extra = list(overrides) + ([f"seed={seed}"] if seed is not None else [])
    try:
        return load_config(config, extra)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc


def _load_data(path, cfg=None):
    path = Path(path)
    if path.is_dir() and cfg is not None:
        return ingest_features(path, cfg.d_in_v, cfg.d_in_a, cfg.d_in_t)
    return load_dataset(path)


def write_curve_csv(curve: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_FIELDS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(curve)


def plot_curves(curve: list[dict], epochs: list[dict], out_dir: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = range(len(curve))
    for key in ("total", "reconstruction", "kl", "exp"):
        ax.plot(steps, [r[key] for r in curve], label=key, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.legend()
    fig.tight_layout()
    written.append(out_dir / "loss.png")
    fig.savefig(written[-1], dpi=120)
    plt.close(fig)
    if epochs and "train_weighted_f1" in epochs[0]:
        fig, ax = plt.subplots(figsize=(6, 4))
        xs = [e["epoch"] for e in epochs]
        ax.plot(xs, [e["train_weighted_f1"] for e in epochs], label="weighted F1")
        ax.plot(xs, [e["train_token_accuracy"] for e in epochs], label="token accuracy")
        ax.set_xlabel("epoch")
        ax.set_ylim(0, 1.02)
        ax.legend()
        fig.tight_layout()
        written.append(out_dir / "metrics.png")
        fig.savefig(written[-1], dpi=120)
        plt.close(fig)
    return written


config_option = click.option("--config", "config", type=click.Path(exists=True, dir_okay=False),
                             help="Flat YAML config file.")
set_option = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                          help="Override one config field; repeatable.")
seed_option = click.option("--seed", type=int, default=None, help="Overrides the config seed.")


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    """Variational causal sarcasm detection and explanation, at toy scale."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("gen-data")
@config_option
@set_option
@seed_option
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Dataset file (JSON lines).")
@click.option("-n", "--num-samples", type=int, default=64, show_default=True)
@click.option("--sarcasm-rate", type=float, default=0.5, show_default=True)
@click.option("--noise-scale", type=float, default=1.0, show_default=True)
def gen_data(config, overrides, seed, out, num_samples, sarcasm_rate, noise_scale):
    """Write a synthetic corpus plus its vocabulary and generator spec."""
    cfg = _config(config, overrides, seed)
    spec = SyntheticCorpusSpec(num_samples=num_samples, sarcasm_rate=sarcasm_rate,
                               noise_scale=noise_scale, seed=cfg.seed,
                               vocab_size=cfg.vocab_size, max_text_len=cfg.max_text_len,
                               max_frames=cfg.max_frames, d_in_v=cfg.d_in_v,
                               d_in_a=cfg.d_in_a)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    samples = generate_synthetic_dataset(spec)
    save_dataset(samples, out)
    build_vocabulary(spec).save(out.with_suffix(".vocab.txt"))
    save_spec(spec, out.with_suffix(".spec.json"))
    n_pos = sum(s.label for s in samples)
    click.echo(f"wrote {len(samples)} samples ({n_pos} sarcastic) to {out}")


@main.command("train")
@config_option
@set_option
@seed_option
@click.option("--data", type=click.Path(exists=True), required=True,
              help="Dataset file or feature directory.")
@click.option("--eval-data", type=click.Path(exists=True), default=None,
              help="Held-out set for the final report (default: the training set).")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--resume", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--plot", is_flag=True, help="Also render loss/metric charts as PNG.")
def train_cmd(config, overrides, seed, data, eval_data, out, resume, plot):
    """Train, checkpoint every epoch, and write report.json and loss_curve.csv."""
    cfg = _config(config, overrides, seed)
    out = Path(out)
    samples = _load_data(data, cfg)
    held_out = None if eval_data is None else _load_data(eval_data, cfg)
    state = train(cfg, samples, out_dir=out, resume=resume)
    save_config(state.model.cfg, out / "config.yaml")
    report = experiment_report(state, samples, held_out)
    write_report(report, out / "report.json")
    write_curve_csv(state.curve, out / "loss_curve.csv")
    if plot:
        for path in plot_curves(state.curve, state.epochs, out):
            click.echo(f"plot: {path}")
    cls = report["classification"]
    click.echo(f"run {report['run_id']}: weighted F1 {cls['weighted_f1']:.4f}, "
               f"token accuracy {report['token_accuracy']:.4f}")


@main.command("eval")
@config_option
@set_option
@seed_option
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--mode", type=click.Choice(["normal", "do_E", "do_F"]), default="normal",
              show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="JSON report path.")
def eval_cmd(config, overrides, seed, checkpoint, data, mode, out):
    """Detection and generation metrics of a checkpoint on a dataset.

    ``--seed`` sets the do(F) noise seed; ``--config``/``--set`` are only
    checked for validity, the checkpoint carries its own config.
    """
    _config(config, overrides, None)
    state = load_checkpoint(checkpoint)
    samples = _load_data(data, state.model.cfg)
    batch = collate(samples)
    result = evaluate(state.model, batch, mode, noise_seed=seed)
    result["run_id"] = run_id(state.model.cfg)
    result["mode"] = mode
    text = json.dumps(result, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text)
    click.echo(text)


@main.command("intervene")
@config_option
@set_option
@seed_option
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def intervene_cmd(config, overrides, seed, checkpoint, data, out):
    """Normal, do(E) and do(F) detection side by side (one shared noise seed)."""
    _config(config, overrides, None)
    state = load_checkpoint(checkpoint)
    samples = _load_data(data, state.model.cfg)
    reports = run_intervention_experiment(state.model, samples, noise_seed=seed)
    rows = {mode: r.to_dict() for mode, r in reports.items()}
    click.echo(f"{'mode':8s} {'acc':>7s} {'P':>7s} {'R':>7s} {'F1':>7s}")
    for mode, r in rows.items():
        click.echo(f"{mode:8s} {r['accuracy']:7.4f} {r['weighted_precision']:7.4f} "
                   f"{r['weighted_recall']:7.4f} {r['weighted_f1']:7.4f}")
    if out:
        Path(out).write_text(json.dumps(rows, indent=2, sort_keys=True))


@main.command("keyframes")
@config_option
@set_option
@seed_option
@click.option("--frames", type=click.Path(exists=True, dir_okay=False), required=True,
              help="n_total x d_e matrix (binary or .csv).")
@click.option("-k", "--k", "k", type=int, default=100, show_default=True,
              help="Keyframes to keep.")
@click.option("-c", "--c", "c", type=int, default=500, show_default=True,
              help="Candidate frames sampled before clustering.")
@click.option("--alpha", type=float, default=0.1, show_default=True)
@click.option("--time-mode", type=click.Choice(["broadcast", "append"]), default="broadcast",
              show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the indices here instead of stdout.")
def keyframes_cmd(config, overrides, seed, frames, k, c, alpha, time_mode, out):
    """Pick k action-diverse keyframes; writes frame indices one per line."""
    cfg = _config(config, overrides, seed)
    sel = select_keyframes(read_matrix(frames), k=k, c=c, alpha=alpha,
                           rng=np.random.default_rng(cfg.seed), time_mode=time_mode)
    text = "\n".join(map(str, sel.indices.tolist())) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


@main.command("export-features")
@config_option
@set_option
@seed_option
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--format", "fmt", type=click.Choice(["bin", "csv"]), default="bin",
              show_default=True)
def export_features_cmd(config, overrides, seed, data, out, fmt):
    """Write a dataset as a feature directory (manifest.csv + matrix files)."""
    _config(config, overrides, seed)
    samples = load_dataset(data)
    manifest = export_features(samples, out, suffix=f".{fmt}")
    click.echo(f"wrote {len(samples)} samples to {manifest}")


if __name__ == "__main__":
    main()
