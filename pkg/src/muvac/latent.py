"""Explanation -> latent causal feature: Gaussian encoder, intervention, sampling, KL."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from .core import BOS, CLS, PAD, ExplanationSequence, LatentGaussian
from .layers import EncoderLayer

LOG_VAR_RANGE = (-20.0, 20.0)
INTERVENTION_MODES = ("train_mask", "do_E", "do_F", "none")


class ExplanationEncoder(nn.Module):
    """Bidirectional transformer over [CLS] + explanation tokens, with Gaussian heads.

    The network emits log-variance, never variance, so exp(log_var) > 0
    holds by construction.
    """

    def __init__(self, vocab_size: int, d: int, d_F: int, n_heads: int, n_layers: int,
                 max_len: int):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, d)
        self.pos = nn.Embedding(max_len, d)
        self.layers = nn.ModuleList(EncoderLayer(d, n_heads) for _ in range(n_layers))
        self.norm_out = nn.LayerNorm(d)
        self.mu_head = nn.Sequential(nn.Linear(d, d), nn.Tanh(), nn.Linear(d, d_F))
        self.log_var_head = nn.Sequential(nn.Linear(d, d), nn.Tanh(), nn.Linear(d, d_F))

    def forward(self, expl: torch.Tensor) -> tuple[torch.Tensor, LatentGaussian]:
        """``expl`` holds padded BOS ... EOS rows; BOS is swapped for [CLS]."""
        if expl.dim() == 1:
            f_cls, g = self.forward(expl.unsqueeze(0))
            return f_cls[0], g[0]
        if expl.shape[1] == 0:
            raise ValueError("empty explanation")
        tokens = expl.clone()
        tokens[:, 0] = torch.where(tokens[:, 0] == BOS, CLS, tokens[:, 0])
        mask = tokens != PAD
        positions = torch.arange(tokens.shape[1], device=tokens.device)
        x = self.embed(tokens) + self.pos(positions)
        for layer in self.layers:
            x = layer(x, mask)
        f_cls = self.norm_out(x[:, 0])
        log_var = self.log_var_head(f_cls).clamp(*LOG_VAR_RANGE)
        return f_cls, LatentGaussian(self.mu_head(f_cls), log_var)


def encode_explanation(encoder: ExplanationEncoder, expl: ExplanationSequence):
    if len(expl.tokens) == 0:
        raise ValueError("empty explanation")
    device = encoder.embed.weight.device
    return encoder(torch.tensor(expl.tokens, dtype=torch.long, device=device))


@dataclass(frozen=True)
class InterventionPolicy:
    epsilon: float = 0.1
    mode: str = "train_mask"

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon out of range [0, 1]: {self.epsilon}")
        if self.mode not in INTERVENTION_MODES:
            raise ValueError(f"unknown intervention mode {self.mode!r}")


def intervention_mask(n: int, policy: InterventionPolicy,
                      rng: torch.Generator) -> torch.Tensor:
    """Boolean (n,) tensor; True where the ground-truth explanation replaces the generated one.

    ``train_mask`` draws one uniform per sample even when epsilon is 0 or 1,
    so the random stream advances identically whatever epsilon is.
    """
    if policy.mode == "train_mask":
        return torch.rand(n, generator=rng) < policy.epsilon
    if policy.mode == "do_E":
        return torch.ones(n, dtype=torch.bool)
    return torch.zeros(n, dtype=torch.bool)


def intervene_select(e_hat: ExplanationSequence, e_prime: ExplanationSequence,
                     policy: InterventionPolicy, rng: torch.Generator) -> ExplanationSequence:
    return e_prime if bool(intervention_mask(1, policy, rng)[0]) else e_hat


def sample_latent(g: LatentGaussian, rng: Optional[torch.Generator] = None,
                  n_samples: Optional[int] = None,
                  noise: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Reparameterised draw ``mu + noise * exp(log_var / 2)``.

    With ``n_samples`` a leading sample axis is added.  Supplying ``noise``
    freezes the draw (used by gradient checks).
    """
    shape = g.mu.shape if n_samples is None else (n_samples, *g.mu.shape)
    if noise is None:
        noise = torch.randn(shape, generator=rng, dtype=g.mu.dtype)
    return g.mu + noise * g.std


def kl_diag_gaussians(q: LatentGaussian, p: LatentGaussian) -> torch.Tensor:
    """Closed-form KL(q || p) between diagonal Gaussians, summed over the last axis."""
    var_ratio = (q.log_var - p.log_var).exp()
    mahalanobis = (p.mu - q.mu) ** 2 * (-p.log_var).exp()
    return 0.5 * (var_ratio + mahalanobis - 1.0 + p.log_var - q.log_var).sum(-1)


def gaussian_log_density(x: torch.Tensor, g: LatentGaussian) -> torch.Tensor:
    """log N(x; mu, diag(var)) summed over the last axis."""
    log_2pi = torch.log(torch.tensor(2 * torch.pi, dtype=x.dtype))
    z = (x - g.mu) ** 2 * (-g.log_var).exp()
    return -0.5 * (z + g.log_var + log_2pi).sum(-1)
