"""Explanation generation: an autoregressive decoder conditioned on M."""

from __future__ import annotations

from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .core import BOS, CLS, EOS, PAD, ExplanationSequence
from .layers import DecoderLayer

# Ids the decoder may never emit.
_BANNED = (PAD, BOS, CLS)


def token_nll(log_probs: torch.Tensor, targets: torch.Tensor,
              mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean negative log-likelihood of ``targets`` per sequence.

    ``log_probs`` is (B, N, vocab), ``targets`` (B, N); ``mask`` marks the
    positions that count (everything after EOS is padding).
    """
    picked = log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    if mask is None:
        mask = torch.ones_like(targets, dtype=torch.bool)
    n = mask.sum(dim=-1)
    if (n == 0).any():
        raise ValueError("empty target sequence")
    return -(picked * mask).sum(dim=-1) / n


def teacher_forcing_split(expl: torch.Tensor):
    """Split padded BOS..EOS rows into decoder inputs, targets and target mask."""
    inputs, targets = expl[:, :-1], expl[:, 1:]
    # Count up to and including the first EOS; anything after it is ignored.
    before_eos = torch.cumsum((targets == EOS).long(), dim=1) - (targets == EOS).long() == 0
    mask = (targets != PAD) & before_eos
    return inputs, targets, mask


class ExplanationDecoder(nn.Module):
    def __init__(self, embed: nn.Embedding, d: int, n_heads: int, n_layers: int,
                 max_len: int):
        super().__init__()
        self.embed = embed
        self.max_len = max_len
        self.pos = nn.Embedding(max_len + 1, d)
        self.layers = nn.ModuleList(DecoderLayer(d, n_heads) for _ in range(n_layers))
        self.norm_out = nn.LayerNorm(d)
        self.lm_head = nn.Linear(d, embed.num_embeddings)

    def logits(self, M, inputs, memory_mask=None):
        positions = torch.arange(inputs.shape[1], device=inputs.device)
        x = self.embed(inputs) + self.pos(positions)
        for layer in self.layers:
            x = layer(x, M, memory_mask=memory_mask)
        return self.lm_head(self.norm_out(x))

    def loss(self, M, expl, memory_mask=None):
        """Per-sample teacher-forced NLL of padded ``expl`` rows (BOS ... EOS PAD*)."""
        inputs, targets, mask = teacher_forcing_split(expl)
        log_probs = F.log_softmax(self.logits(M, inputs, memory_mask), dim=-1)
        return token_nll(log_probs, targets, mask)

    def token_accuracy(self, M, expl, memory_mask=None):
        """(correct, total) argmax predictions under teacher forcing."""
        inputs, targets, mask = teacher_forcing_split(expl)
        pred = self.logits(M, inputs, memory_mask).argmax(-1)
        return int(((pred == targets) & mask).sum()), int(mask.sum())

    def _next_log_probs(self, M, prefix, memory_mask):
        logits = self.logits(M, prefix, memory_mask)[:, -1]
        logits[:, list(_BANNED)] = float("-inf")
        return F.log_softmax(logits, dim=-1)

    @torch.no_grad()
    def greedy(self, M, memory_mask=None, max_len: Optional[int] = None) -> torch.Tensor:
        """Batched argmax decoding; rows are BOS ... EOS then PAD."""
        max_len = self.max_len if max_len is None else max_len
        b = M.shape[0]
        seq = torch.full((b, 1), BOS, dtype=torch.long, device=M.device)
        done = torch.zeros(b, dtype=torch.bool, device=M.device)
        for step in range(max_len):
            if step == max_len - 1:
                nxt = torch.full((b,), EOS, dtype=torch.long, device=M.device)
            else:
                nxt = self._next_log_probs(M, seq, memory_mask).argmax(-1)
            nxt = torch.where(done, torch.full_like(nxt, PAD), nxt)
            seq = torch.cat([seq, nxt.unsqueeze(1)], dim=1)
            done |= nxt == EOS
            if done.all():
                break
        return seq

    @torch.no_grad()
    def beam(self, M, width: int = 4, memory_mask=None,
             max_len: Optional[int] = None) -> list[int]:
        """Beam search for one unbatched M; length-normalised log-probability."""
        max_len = self.max_len if max_len is None else max_len
        if M.dim() == 2:
            M = M.unsqueeze(0)
            memory_mask = None if memory_mask is None else memory_mask.unsqueeze(0)
        alive: list[tuple[list[int], float]] = [([BOS], 0.0)]
        finished: list[tuple[list[int], float]] = []
        for step in range(max_len):
            if not alive:
                break
            prefix = torch.tensor([h[0] for h in alive], device=M.device)
            mem = M.expand(len(alive), -1, -1)
            mm = None if memory_mask is None else memory_mask.expand(len(alive), -1)
            lp = self._next_log_probs(mem, prefix, mm)
            candidates = []
            for i, (toks, score) in enumerate(alive):
                if step == max_len - 1:
                    candidates.append((toks + [EOS], score + float(lp[i, EOS])))
                    continue
                top = torch.topk(lp[i], width)
                for value, idx in zip(top.values.tolist(), top.indices.tolist()):
                    candidates.append((toks + [idx], score + value))
            candidates.sort(key=lambda h: h[1], reverse=True)
            alive = []
            for toks, score in candidates:
                if toks[-1] == EOS:
                    finished.append((toks, score))
                elif len(alive) < width:
                    alive.append((toks, score))
            if len(finished) >= width:
                break
        best = max(finished, key=lambda h: h[1] / (len(h[0]) - 1))
        return best[0]


def decode_explanation(decoder: ExplanationDecoder, M: torch.Tensor, mode: str = "greedy",
                       width: int = 4, memory_mask=None) -> ExplanationSequence:
    """Generate one explanation from an unbatched fused representation."""
    if M.dim() != 2 or M.shape[0] == 0:
        raise ValueError("decode_explanation expects a non-empty (n, d) representation")
    if mode == "greedy":
        mm = None if memory_mask is None else memory_mask.unsqueeze(0)
        row = decoder.greedy(M.unsqueeze(0), mm)[0].tolist()
        tokens = [t for t in row if t != PAD]
    elif mode == "beam":
        tokens = decoder.beam(M, width, memory_mask)
    else:
        raise ValueError(f"unknown decode mode {mode!r}")
    return ExplanationSequence(tuple(tokens), is_ground_truth=False)


def pad_explanations(seqs: Sequence[Sequence[int]], device=None) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), PAD, dtype=torch.long, device=device)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = torch.tensor(list(s), dtype=torch.long)
    return out


def explanation_loss(decoder: ExplanationDecoder, M: torch.Tensor,
                     target: ExplanationSequence, memory_mask=None) -> torch.Tensor:
    """Teacher-forced mean token NLL of one ground-truth explanation given unbatched M."""
    if len(target.tokens) < 2:
        raise ValueError("empty explanation")
    expl = pad_explanations([target.tokens], device=M.device)
    mm = None if memory_mask is None else memory_mask.unsqueeze(0)
    return decoder.loss(M.unsqueeze(0), expl, mm)[0]
