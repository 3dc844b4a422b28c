"""Align-then-fusion (ATF) layers: the path from raw modality features to M.

Pipeline, for text T (n x d), visual V (v x d) and acoustic A (1 x d):

1. alignment: ``V_align = CA(V, T)``, ``A_align = CA(A, T)`` (non-text query,
   text keys/values);
2. context-aware self-attention over T with each aligned modality as
   context, giving ``V_con`` and ``A_con``;
3. reciprocal augmentation: ``V_out = ContextCA(T, V_con, A_con)`` and
   ``A_out = ContextCA(T, A_con, V_con)``;
4. gated residual fusion ``M = T + w_v * V_out + w_a * A_out``.

Context mixing uses per-position gates computed on the full (pre-head-split)
keys and values::

    lam_k = sigmoid(K @ W_k1 + (C @ U_k) @ W_k2)
    K_hat = (1 - lam_k) * K + lam_k * (C @ U_k)

and likewise for values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from .layers import MultiHeadAttention, batched, masked_mean


@dataclass
class ContextTrace:
    """Intermediates of one context-aware attention call."""

    lam_k: torch.Tensor
    lam_v: torch.Tensor
    k_hat: torch.Tensor
    v_hat: torch.Tensor
    weights: torch.Tensor


class ContextAttention(nn.Module):
    """Attention whose keys and values are gated towards a projected context."""

    def __init__(self, d: int, n_heads: int, d_c: Optional[int] = None):
        super().__init__()
        d_c = d if d_c is None else d_c
        self.attn = MultiHeadAttention(d, n_heads)
        self.U_k = nn.Parameter(torch.empty(d_c, d))
        self.U_v = nn.Parameter(torch.empty(d_c, d))
        self.W_k1 = nn.Parameter(torch.empty(d, 1))
        self.W_k2 = nn.Parameter(torch.empty(d, 1))
        self.W_v1 = nn.Parameter(torch.empty(d, 1))
        self.W_v2 = nn.Parameter(torch.empty(d, 1))

    @staticmethod
    def conform_context(context, n_rows, context_mask=None, pool=False):
        # Row-aligned context is used position-wise; anything else is
        # mean-pooled to a single row and broadcast.
        if not pool and context.shape[1] == n_rows:
            return context
        pooled = masked_mean(context, context_mask).unsqueeze(1)
        return pooled.expand(-1, n_rows, -1)

    @batched
    def forward(self, query_seq, kv_seq, context, kv_mask=None, context_mask=None,
                pool_context=False, need_trace=False):
        if torch.isnan(context).any() or torch.isnan(kv_seq).any():
            raise ValueError("NaN in context-attention input")
        if context.shape[-1] != self.U_k.shape[0]:
            raise ValueError(f"context width {context.shape[-1]} != d_c={self.U_k.shape[0]}")
        if query_seq.shape[-1] != kv_seq.shape[-1]:
            raise ValueError("query and key/value widths differ")
        c = self.conform_context(context, kv_seq.shape[1], context_mask, pool_context)
        k = self.attn.k_proj(kv_seq)
        v = self.attn.v_proj(kv_seq)
        cu_k = c @ self.U_k
        cu_v = c @ self.U_v
        lam_k = torch.sigmoid(k @ self.W_k1 + cu_k @ self.W_k2)
        lam_v = torch.sigmoid(v @ self.W_v1 + cu_v @ self.W_v2)
        k_hat = (1 - lam_k) * k + lam_k * cu_k
        v_hat = (1 - lam_v) * v + lam_v * cu_v
        out, weights = self.attn.attend(self.attn.q_proj(query_seq), k_hat, v_hat, kv_mask)
        if need_trace:
            return out, ContextTrace(lam_k, lam_v, k_hat, v_hat, weights)
        return out


class GatedFusion(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.W_v = nn.Parameter(torch.empty(2 * d, d))
        self.W_a = nn.Parameter(torch.empty(2 * d, d))
        self.b_v = nn.Parameter(torch.empty(d))
        self.b_a = nn.Parameter(torch.empty(d))

    def gates(self, T, V_out, A_out):
        w_v = torch.sigmoid(torch.cat([T, V_out], dim=-1) @ self.W_v + self.b_v)
        w_a = torch.sigmoid(torch.cat([T, A_out], dim=-1) @ self.W_a + self.b_a)
        return w_v, w_a

    def forward(self, T, V_out, A_out, need_gates=False):
        if not (T.shape == V_out.shape == A_out.shape):
            raise ValueError(f"gated fusion needs equal shapes, got {tuple(T.shape)}, "
                             f"{tuple(V_out.shape)}, {tuple(A_out.shape)}")
        w_v, w_a = self.gates(T, V_out, A_out)
        M = T + w_v * V_out + w_a * A_out
        return (M, (w_v, w_a)) if need_gates else M


class ATF(nn.Module):
    """Align-then-fusion stack."""

    def __init__(self, d: int, n_heads: int, d_c: Optional[int] = None):
        super().__init__()
        self.align_v = MultiHeadAttention(d, n_heads)
        self.align_a = MultiHeadAttention(d, n_heads)
        self.context_sa_v = ContextAttention(d, n_heads, d_c)
        self.context_sa_a = ContextAttention(d, n_heads, d_c)
        self.context_ca_v = ContextAttention(d, n_heads, d_c)
        self.context_ca_a = ContextAttention(d, n_heads, d_c)
        self.gate = GatedFusion(d)

    def align(self, T, V, A, text_mask=None):
        return (self.align_v(V, T, key_mask=text_mask),
                self.align_a(A, T, key_mask=text_mask))

    def context_self(self, T, V_align, A_align, text_mask=None, frame_mask=None):
        # Frames do not correspond to text positions, so the context is always pooled.
        V_con = self.context_sa_v(T, T, V_align, kv_mask=text_mask,
                                  context_mask=frame_mask, pool_context=True)
        A_con = self.context_sa_a(T, T, A_align, kv_mask=text_mask, pool_context=True)
        return V_con, A_con

    def reciprocal(self, T, V_con, A_con, text_mask=None):
        V_out = self.context_ca_v(T, V_con, A_con, kv_mask=text_mask)
        A_out = self.context_ca_a(T, A_con, V_con, kv_mask=text_mask)
        return V_out, A_out

    def forward(self, T, V, A, text_mask=None, frame_mask=None, need_intermediates=False):
        unbatched = T.dim() == 2
        if unbatched:
            T, V, A = T.unsqueeze(0), V.unsqueeze(0), A.unsqueeze(0)
            text_mask = None if text_mask is None else text_mask.unsqueeze(0)
            frame_mask = None if frame_mask is None else frame_mask.unsqueeze(0)
        V_align, A_align = self.align(T, V, A, text_mask)
        V_con, A_con = self.context_self(T, V_align, A_align, text_mask, frame_mask)
        V_out, A_out = self.reciprocal(T, V_con, A_con, text_mask)
        M, (w_v, w_a) = self.gate(T, V_out, A_out, need_gates=True)
        if unbatched:
            M = M.squeeze(0)
        if need_intermediates:
            parts = dict(V_align=V_align, A_align=A_align, V_con=V_con, A_con=A_con,
                         V_out=V_out, A_out=A_out, w_v=w_v, w_a=w_a)
            if unbatched:
                parts = {k: v.squeeze(0) for k, v in parts.items()}
            return M, parts
        return M
