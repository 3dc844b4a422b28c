"""Attention and transformer blocks shared by the encoders and the decoder.

Sequences are row-major: ``(batch, length, features)``.  Every public
``forward`` also accepts an unbatched ``(length, features)`` tensor.
Masks are boolean with ``True`` marking valid positions.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn


def init_parameters(module: nn.Module, d: int, gen: torch.Generator) -> None:
    """uniform(-1/sqrt(d), 1/sqrt(d)) for weights, zeros for biases, ones for norm gains."""
    bound = 1.0 / math.sqrt(d)
    with torch.no_grad():
        for name, p in module.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if leaf.startswith("bias") or leaf.startswith("b_"):
                p.zero_()
            elif ".norm" in f".{name}" and leaf == "weight":
                p.fill_(1.0)
            else:
                p.copy_(torch.rand(p.shape, generator=gen, dtype=p.dtype) * 2 * bound - bound)


def _unbatch(obj):
    if isinstance(obj, torch.Tensor):
        return obj.squeeze(0)
    if dataclasses.is_dataclass(obj):
        return dataclasses.replace(obj, **{f.name: _unbatch(getattr(obj, f.name))
                                           for f in dataclasses.fields(obj)})
    return obj


def batched(fn):
    """Let a method taking (B, L, D) tensors also take unbatched (L, D) ones."""

    def wrapper(self, x, *args, **kwargs):
        if x.dim() == 2:
            args = [a.unsqueeze(0) if isinstance(a, torch.Tensor) else a for a in args]
            kwargs = {k: v.unsqueeze(0) if isinstance(v, torch.Tensor) else v
                      for k, v in kwargs.items()}
            out = fn(self, x.unsqueeze(0), *args, **kwargs)
            if isinstance(out, tuple):
                return tuple(_unbatch(o) for o in out)
            return out.squeeze(0)
        return fn(self, x, *args, **kwargs)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def masked_mean(x: torch.Tensor, mask: Optional[torch.Tensor]) -> torch.Tensor:
    """Mean over the length axis of (B, L, D), ignoring padded rows."""
    if mask is None:
        return x.mean(dim=1)
    w = mask.to(x.dtype).unsqueeze(-1)
    return (x * w).sum(dim=1) / w.sum(dim=1).clamp_min(1.0)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention over ``n_heads`` heads with output projection."""

    def __init__(self, d: int, n_heads: int):
        super().__init__()
        if d % n_heads:
            raise ValueError(f"d={d} not divisible by n_heads={n_heads}")
        self.d, self.n_heads = d, n_heads
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.out_proj = nn.Linear(d, d)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.n_heads, self.d // self.n_heads).transpose(1, 2)

    def attend(self, q, k, v, key_mask=None, causal=False):
        """Attention on already-projected (B, L, d) tensors.

        Returns the output-projected result and the (B, heads, Lq, Lk)
        weight tensor.
        """
        qh, kh, vh = self._split(q), self._split(k), self._split(v)
        scores = qh @ kh.transpose(-1, -2) / math.sqrt(self.d // self.n_heads)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        if causal:
            lq, lk = scores.shape[-2:]
            future = torch.ones(lq, lk, dtype=torch.bool, device=q.device).triu(1 + lk - lq)
            scores = scores.masked_fill(future, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ vh).transpose(1, 2).reshape(q.shape)
        return self.out_proj(out), weights

    @batched
    def forward(self, query, kv, key_mask=None, causal=False, need_weights=False):
        out, weights = self.attend(self.q_proj(query), self.k_proj(kv), self.v_proj(kv),
                                   key_mask, causal)
        return (out, weights) if need_weights else out


class FeedForward(nn.Module):
    def __init__(self, d: int, mult: int = 2):
        super().__init__()
        self.fc1 = nn.Linear(d, mult * d)
        self.fc2 = nn.Linear(mult * d, d)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class EncoderLayer(nn.Module):
    """Pre-norm bidirectional transformer layer."""

    def __init__(self, d: int, n_heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads)
        self.norm2 = nn.LayerNorm(d)
        self.ffn = FeedForward(d)

    def forward(self, x, mask=None):
        h = self.norm1(x)
        x = x + self.attn(h, h, key_mask=mask)
        return x + self.ffn(self.norm2(x))


class DecoderLayer(nn.Module):
    """Pre-norm causal self-attention, cross-attention to a memory, feed-forward."""

    def __init__(self, d: int, n_heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, n_heads)
        self.norm2 = nn.LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, n_heads)
        self.norm3 = nn.LayerNorm(d)
        self.ffn = FeedForward(d)

    def forward(self, x, memory, self_mask=None, memory_mask=None):
        h = self.norm1(x)
        x = x + self.self_attn(h, h, key_mask=self_mask, causal=True)
        x = x + self.cross_attn(self.norm2(x), memory, key_mask=memory_mask)
        return x + self.ffn(self.norm3(x))
