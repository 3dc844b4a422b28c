"""Detection head and the classification objective.

The classifier reads ``softmax([F; mean(M)] @ W_y + b_y)``.  Training draws F
by reparameterisation from the latent of the explanation actually fed to the
head; inference uses that latent's mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F_
from torch import nn

from .core import LatentGaussian
from .latent import gaussian_log_density, kl_diag_gaussians, sample_latent
from .layers import masked_mean


class Classifier(nn.Module):
    def __init__(self, d_F: int, d: int, n_classes: int = 2):
        super().__init__()
        self.W_y = nn.Parameter(torch.empty(d_F + d, n_classes))
        self.b_y = nn.Parameter(torch.empty(n_classes))

    def logits(self, F: torch.Tensor, M_bar: torch.Tensor) -> torch.Tensor:
        """``F`` (..., d_F) and ``M_bar`` (..., d) broadcast against each other."""
        M_bar = M_bar.expand(*F.shape[:-1], M_bar.shape[-1])
        return torch.cat([F, M_bar], dim=-1) @ self.W_y + self.b_y

    def forward(self, F, M, mask=None):
        return torch.softmax(self.logits(F, pool(M, mask)), dim=-1)


def pool(M: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean over sequence positions; (n, d) -> (d,), (B, n, d) -> (B, d)."""
    if M.shape[-2] == 0:
        raise ValueError("empty fused representation")
    if M.dim() == 2:
        return M.mean(dim=0)
    return masked_mean(M, mask)


def classify(classifier: Classifier, F: torch.Tensor, M: torch.Tensor,
             mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Class probabilities from latent feature F and fused representation M."""
    return classifier(F, M, mask)


@dataclass
class LossBreakdown:
    reconstruction: torch.Tensor
    kl: torch.Tensor
    exp: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.reconstruction + self.kl + self.exp

    def as_floats(self) -> dict[str, float]:
        rec, kl, exp = (float(t.detach()) if torch.is_tensor(t) else float(t)
                        for t in (self.reconstruction, self.kl, self.exp))
        return {"reconstruction": rec, "kl": kl, "exp": exp, "total": rec + kl + exp}


def reconstruction_loss(classifier: Classifier, labels: torch.Tensor, M_bar: torch.Tensor,
                        source: LatentGaussian, H: int, rng: Optional[torch.Generator],
                        noise: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Per-sample Monte-Carlo cross-entropy over H reparameterised draws."""
    if H < 1:
        raise ValueError(f"H must be >= 1, got {H}")
    F = sample_latent(source, rng, n_samples=H, noise=noise)  # (H, B, d_F)
    log_probs = F_.log_softmax(classifier.logits(F, M_bar), dim=-1)
    picked = log_probs.gather(-1, labels.expand(H, -1).unsqueeze(-1)).squeeze(-1)
    return -picked.mean(dim=0)


def classification_loss(classifier: Classifier, labels: torch.Tensor, M: torch.Tensor,
                        q: LatentGaussian, p: LatentGaussian, H: int,
                        rng: Optional[torch.Generator] = None,
                        source: Optional[LatentGaussian] = None,
                        mask: Optional[torch.Tensor] = None,
                        noise: Optional[torch.Tensor] = None) -> LossBreakdown:
    """Reconstruction + KL(q || p), batch-averaged; the ``exp`` field is zero.

    ``q`` is the ground-truth explanation's latent, ``p`` the generated
    one's.  F is sampled from ``source`` (default ``q``).
    """
    if M.dim() == 2:
        M, labels = M.unsqueeze(0), labels.reshape(1)
        q, p = LatentGaussian(q.mu.reshape(1, -1), q.log_var.reshape(1, -1)), \
            LatentGaussian(p.mu.reshape(1, -1), p.log_var.reshape(1, -1))
        if source is not None:
            source = LatentGaussian(source.mu.reshape(1, -1), source.log_var.reshape(1, -1))
        if noise is not None:
            noise = noise.reshape(noise.shape[0], 1, -1)
    rec = reconstruction_loss(classifier, labels, pool(M, mask), q if source is None else source,
                              H, rng, noise)
    kl = kl_diag_gaussians(q, p)
    return LossBreakdown(rec.mean(), kl.mean(), torch.zeros((), dtype=M.dtype))


@dataclass(frozen=True)
class ElboEstimate:
    """Per-sample Monte-Carlo estimates, each with its standard error."""

    log_likelihood: torch.Tensor  # importance-sampled log p(Y'|M)
    log_likelihood_se: torch.Tensor
    bound: torch.Tensor  # E_q[log p(Y'|M,F)] - KL(q || p)
    bound_se: torch.Tensor

    def gap_ok(self, n_se: float = 3.0) -> torch.Tensor:
        """True where the likelihood estimate is not below the bound beyond n_se errors."""
        se = torch.sqrt(self.log_likelihood_se ** 2 + self.bound_se ** 2)
        return self.log_likelihood >= self.bound - n_se * se


@torch.no_grad()
def elbo_estimate(classifier: Classifier, labels: torch.Tensor, M_bar: torch.Tensor,
                  q: LatentGaussian, p: LatentGaussian, n_samples: int,
                  rng: Optional[torch.Generator] = None) -> ElboEstimate:
    """Compare log p(Y'|M) = log E_p[p(Y'|M,F)] with its variational lower bound.

    Both use the same draws F ~ q.  The likelihood weights each draw by
    p(F)/q(F); its standard error comes from the delta method on the mean
    weight.
    """
    F = sample_latent(q, rng, n_samples=n_samples)  # (S, B, d_F)
    log_lik = F_.log_softmax(classifier.logits(F, M_bar), dim=-1)
    log_lik = log_lik.gather(-1, labels.expand(n_samples, -1).unsqueeze(-1)).squeeze(-1)
    log_w = log_lik + gaussian_log_density(F, p) - gaussian_log_density(F, q)
    log_mean_w = torch.logsumexp(log_w, dim=0) - torch.log(torch.tensor(float(n_samples)))
    w_rel = (log_w - log_mean_w).exp()  # weights over their mean
    ll_se = w_rel.std(dim=0) / n_samples ** 0.5
    bound = log_lik.mean(dim=0) - kl_diag_gaussians(q, p)
    bound_se = log_lik.std(dim=0) / n_samples ** 0.5
    return ElboEstimate(log_mean_w, ll_se, bound, bound_se)
