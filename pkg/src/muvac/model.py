"""The full causal chain X -> M -> E -> F -> Y with toy modality encoders."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .core import (PAD, DetectionOutput, ExplanationSequence, LatentGaussian, ModelConfig,
                   MultimodalSample, check_config)
from .detector import (Classifier, ElboEstimate, LossBreakdown, classification_loss,
                       elbo_estimate, pool)
from .explain import ExplanationDecoder, pad_explanations
from .fusion import ATF
from .latent import ExplanationEncoder, InterventionPolicy, intervention_mask
from .layers import EncoderLayer, init_parameters

INFER_MODES = ("normal", "do_E", "do_F")


@dataclass
class Batch:
    visual: torch.Tensor  # (B, v, d_in_v)
    frame_mask: torch.Tensor  # (B, v)
    acoustic: torch.Tensor  # (B, 1, d_in_a)
    text_mask: torch.Tensor  # (B, n)
    labels: torch.Tensor  # (B,)
    text: Optional[torch.Tensor] = None  # (B, n) token ids
    text_features: Optional[torch.Tensor] = None  # (B, n, d_in_t)
    expl: Optional[torch.Tensor] = None  # (B, L) BOS ... EOS PAD*
    ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def to(self, dtype: torch.dtype) -> "Batch":
        cast = lambda t: None if t is None else t.to(dtype)
        return replace(self, visual=cast(self.visual), acoustic=cast(self.acoustic),
                       text_features=cast(self.text_features))

    def with_explanations(self, expl: Optional[torch.Tensor]) -> "Batch":
        return replace(self, expl=expl)

    def subset(self, idx) -> "Batch":
        idx = torch.as_tensor(idx, dtype=torch.long)
        pick = lambda t: None if t is None else t[idx]
        return Batch(visual=self.visual[idx], frame_mask=self.frame_mask[idx],
                     acoustic=self.acoustic[idx], text_mask=self.text_mask[idx],
                     labels=self.labels[idx], text=pick(self.text),
                     text_features=pick(self.text_features), expl=pick(self.expl),
                     ids=[self.ids[i] for i in idx.tolist()] if self.ids else [])


def collate(samples: Sequence[MultimodalSample], dtype=torch.float32) -> Batch:
    b = len(samples)
    n = max(s.text_length for s in samples)
    v = max(len(s.visual) for s in samples)
    text_mask = torch.zeros(b, n, dtype=torch.bool)
    frame_mask = torch.zeros(b, v, dtype=torch.bool)
    visual = torch.zeros(b, v, samples[0].visual.shape[1], dtype=dtype)
    text = text_features = None
    if samples[0].text_features is not None:
        text_features = torch.zeros(b, n, samples[0].text_features.shape[1], dtype=dtype)
    else:
        text = torch.full((b, n), PAD, dtype=torch.long)
    for i, s in enumerate(samples):
        text_mask[i, :s.text_length] = True
        frame_mask[i, :len(s.visual)] = True
        visual[i, :len(s.visual)] = torch.from_numpy(np.asarray(s.visual)).to(dtype)
        if text_features is not None:
            text_features[i, :s.text_length] = torch.from_numpy(np.asarray(s.text_features)).to(dtype)
        else:
            text[i, :s.text_length] = torch.tensor(s.text_tokens)
    acoustic = torch.from_numpy(np.stack([np.asarray(s.acoustic) for s in samples])).to(dtype)
    return Batch(visual=visual, frame_mask=frame_mask, acoustic=acoustic, text_mask=text_mask,
                 labels=torch.tensor([s.label for s in samples]), text=text,
                 text_features=text_features,
                 expl=pad_explanations([s.gt_explanation for s in samples]),
                 ids=[s.sample_id for s in samples])


@dataclass
class StepInfo:
    used_ground_truth: torch.Tensor
    generated: torch.Tensor


class MuVaC(nn.Module):
    """Toy encoders, ATF fusion, explanation decoder, latent encoder and classifier.

    Parameters split into a ``base`` group (text embedding/encoder, modality
    projections, decoder: the pretrained-backbone analogues) and a ``new``
    group (ATF, latent encoder, classifier).
    """

    def __init__(self, cfg: ModelConfig, rng: torch.Generator):
        super().__init__()
        self.cfg = check_config(cfg)
        d = cfg.d
        self.text_embed = nn.Embedding(cfg.vocab_size, d)
        self.text_pos = nn.Embedding(cfg.max_text_len, d)
        self.text_adapter = nn.Linear(cfg.d_in_t, d) if cfg.d_in_t else None
        self.encoder = nn.ModuleList(EncoderLayer(d, cfg.n_heads)
                                     for _ in range(cfg.n_encoder_layers))
        self.visual_proj = nn.Linear(cfg.d_in_v, d)
        self.acoustic_proj = nn.Linear(cfg.d_in_a, d)
        self.atf = ATF(d, cfg.n_heads, cfg.d_c)
        self.decoder = ExplanationDecoder(self.text_embed, d, cfg.n_heads, cfg.n_decoder_layers,
                                          cfg.max_expl_len)
        self.latent = ExplanationEncoder(cfg.vocab_size, d, cfg.d_F, cfg.n_heads,
                                         cfg.n_latent_layers, cfg.max_expl_len + 1)
        self.classifier = Classifier(cfg.d_F, d)
        init_parameters(self, d, rng)

    # -- parameter groups -------------------------------------------------

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        new_prefixes = ("atf.", "latent.", "classifier.")
        groups: dict[str, list[nn.Parameter]] = {"base": [], "new": []}
        for name, p in self.named_parameters():
            groups["new" if name.startswith(new_prefixes) else "base"].append(p)
        return groups

    # -- X -> M -----------------------------------------------------------

    def toy_encode(self, batch: Batch):
        """Modality features of width d: text after the first encoder layers, V, A."""
        if batch.text_features is not None:
            if self.text_adapter is None:
                raise ValueError("model has no text adapter (d_in_t=0)")
            x = self.text_adapter(batch.text_features)
        else:
            x = self.text_embed(batch.text)
        n = x.shape[1]
        if n > self.cfg.max_text_len:
            raise ValueError(f"text length {n} exceeds max_text_len={self.cfg.max_text_len}")
        x = x + self.text_pos(torch.arange(n))
        for layer in self.encoder[:self.cfg.atf_insertion_layer]:
            x = layer(x, batch.text_mask)
        return x, self.visual_proj(batch.visual), self.acoustic_proj(batch.acoustic)

    def fuse(self, batch: Batch) -> torch.Tensor:
        T, V, A = self.toy_encode(batch)
        M = self.atf(T, V, A, batch.text_mask, batch.frame_mask)
        for layer in self.encoder[self.cfg.atf_insertion_layer:]:
            M = layer(M, batch.text_mask)
        return M

    # -- M -> E -----------------------------------------------------------

    def generate(self, M: torch.Tensor, text_mask: torch.Tensor) -> torch.Tensor:
        """Padded BOS ... EOS rows of generated explanations (no gradient)."""
        if self.cfg.decode_mode == "greedy":
            return self.decoder.greedy(M.detach(), text_mask)
        seqs = [self.decoder.beam(M[i].detach(), self.cfg.beam_width, text_mask[i])
                for i in range(M.shape[0])]
        return pad_explanations(seqs)

    # -- objective --------------------------------------------------------

    def total_loss(self, batch: Batch, rng: Optional[torch.Generator],
                   policy: Optional[InterventionPolicy] = None,
                   generated: Optional[torch.Tensor] = None,
                   use_ground_truth: Optional[torch.Tensor] = None,
                   noise: Optional[torch.Tensor] = None) -> tuple[LossBreakdown, StepInfo]:
        """L = L_cls + L_exp for one batch.

        ``generated``, ``use_ground_truth`` and ``noise`` freeze the
        otherwise re-drawn generated explanations, intervention draws and
        reparameterisation noise.
        """
        if policy is None:
            policy = InterventionPolicy(self.cfg.epsilon, "train_mask")
        M = self.fuse(batch)
        l_exp = self.decoder.loss(M, batch.expl, batch.text_mask).mean()
        e_hat = self.generate(M, batch.text_mask) if generated is None else generated
        if use_ground_truth is None:
            use_ground_truth = intervention_mask(len(batch), policy, rng)
        _, q = self.latent(batch.expl)
        _, p = self.latent(e_hat)
        # The head is fed the latent of whichever explanation the intervention chose.
        source = q.select(use_ground_truth, p)
        cls = classification_loss(self.classifier, batch.labels, M, q, p, self.cfg.H, rng,
                                  source=source, mask=batch.text_mask, noise=noise)
        return LossBreakdown(cls.reconstruction, cls.kl, l_exp), StepInfo(use_ground_truth, e_hat)

    # -- inference --------------------------------------------------------

    @torch.no_grad()
    def infer(self, batch: Batch, mode: str = "normal", rng: Optional[torch.Generator] = None,
              explanations: Optional[torch.Tensor] = None):
        """Return (probs (B, 2), explanation rows used, F).

        ``explanations`` replaces the decoder output in normal mode (manual
        intervention on E).
        """
        if mode not in INFER_MODES:
            raise ValueError(f"unknown inference mode {mode!r}")
        M = self.fuse(batch)
        if mode == "do_E":
            if batch.expl is None:
                raise ValueError("do_E needs ground-truth explanations")
            expl = batch.expl
        else:
            expl = self.generate(M, batch.text_mask) if explanations is None else explanations
        if mode == "do_F":
            F = torch.randn(len(batch), self.cfg.d_F, generator=rng, dtype=M.dtype)
        else:
            F = self.latent(expl)[1].mu
        return self.classifier(F, M, batch.text_mask), expl, F

    def detect(self, batch: Batch, mode: str = "normal",
               rng: Optional[torch.Generator] = None) -> list[DetectionOutput]:
        probs, expl, _ = self.infer(batch, mode, rng)
        source = {"normal": "generated", "do_E": "ground_truth_intervened",
                  "do_F": "noise_intervened"}[mode]
        out = []
        for i in range(len(batch)):
            tokens = tuple(t for t in expl[i].tolist() if t != PAD)
            p = probs[i].double()
            p = (p / p.sum()).tolist()
            out.append(DetectionOutput((p[0], p[1]),
                                       ExplanationSequence(tokens, mode == "do_E"), source))
        return out

    @torch.no_grad()
    def latents(self, batch: Batch, generated: Optional[torch.Tensor] = None):
        """(M, q from ground truth, p from generated explanations)."""
        M = self.fuse(batch)
        e_hat = self.generate(M, batch.text_mask) if generated is None else generated
        return M, self.latent(batch.expl)[1], self.latent(e_hat)[1]

    @torch.no_grad()
    def elbo(self, batch: Batch, n_samples: int, rng: Optional[torch.Generator]) -> ElboEstimate:
        M, q, p = self.latents(batch)
        return elbo_estimate(self.classifier, batch.labels, pool(M, batch.text_mask), q, p,
                             n_samples, rng)


def infer_sample(model: MuVaC, sample: MultimodalSample, mode: str = "normal",
                 rng: Optional[torch.Generator] = None) -> DetectionOutput:
    dtype = next(model.parameters()).dtype
    batch = collate([sample], dtype)
    if mode != "do_E":
        batch = batch.with_explanations(None)
    return model.detect(batch, mode, rng)[0]
