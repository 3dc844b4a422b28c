#!/usr/bin/env python3
"""Compare the importance-sampled log-likelihood with its variational bound.

Loads a checkpoint (e.g. from run_overfit.py) and prints, per sample, the
estimate of log p(y|M), the bound and their Monte-Carlo standard errors.
"""

import click
import torch

from muvac.core import seeded_rng
from muvac.data import SyntheticCorpusSpec, generate_synthetic_dataset, load_dataset
from muvac.model import collate
from muvac.train import load_checkpoint


@click.command()
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True), default=None,
              help="Dataset file; defaults to the toy training corpus.")
@click.option("-n", "--num-samples", type=int, default=16, show_default=True)
@click.option("--draws", type=int, default=100_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def main(checkpoint, data, num_samples, draws, seed):
    state = load_checkpoint(checkpoint, dtype=torch.float64)
    samples = (load_dataset(data) if data else
               generate_synthetic_dataset(SyntheticCorpusSpec(num_samples=64,
                                                              seed=state.model.cfg.seed)))
    batch = collate(samples[:num_samples], torch.float64)
    est = state.model.eval().elbo(batch, draws, seeded_rng(seed))
    ok = est.gap_ok()
    click.echo(f"{'sample':>10s} {'log p':>12s} {'se':>9s} {'bound':>12s} {'se':>9s}  ok")
    for i, sid in enumerate(batch.ids):
        click.echo(f"{sid:>10s} {est.log_likelihood[i]:12.4e} {est.log_likelihood_se[i]:9.2e} "
                   f"{est.bound[i]:12.4e} {est.bound_se[i]:9.2e}  {bool(ok[i])}")
    click.echo(f"{int(ok.sum())}/{len(ok)} samples satisfy the bound within 3 standard errors")


if __name__ == "__main__":
    main()
