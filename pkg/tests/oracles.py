"""Independent reference implementations the package is checked against.

Everything here is written from the definitions, in plain numpy or Python
loops, without importing the code under test.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter

import numpy as np
import torch


# -- probability ---------------------------------------------------------------


def kl_monte_carlo(mu_q, lv_q, mu_p, lv_p, n, rng: np.random.Generator):
    """E_q[log q(x) - log p(x)] from n draws; returns (estimate, standard error)."""
    sd_q = np.exp(0.5 * lv_q)
    x = mu_q + sd_q * rng.standard_normal((n, len(mu_q)))

    def logpdf(x, mu, lv):
        return -0.5 * (((x - mu) ** 2) / np.exp(lv) + lv + math.log(2 * math.pi)).sum(-1)

    diff = logpdf(x, mu_q, lv_q) - logpdf(x, mu_p, lv_p)
    return diff.mean(), diff.std(ddof=1) / math.sqrt(n)


def softmax(x, axis=-1):
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# -- attention -----------------------------------------------------------------


def linear(x, layer):
    return x @ layer.weight.detach().numpy().T + layer.bias.detach().numpy()


def attention_loops(q, k, v, n_heads, out_layer, key_mask=None):
    """Multi-head scaled dot-product attention, one query row and head at a time.

    ``q``/``k``/``v`` are already projected (rows x d).  Returns (output, weights[h, i, j]).
    """
    d = q.shape[1]
    dh = d // n_heads
    out = np.zeros_like(q)
    weights = np.zeros((n_heads, len(q), len(k)))
    for h in range(n_heads):
        cols = slice(h * dh, (h + 1) * dh)
        for i in range(len(q)):
            scores = np.array([q[i, cols] @ k[j, cols] / math.sqrt(dh) for j in range(len(k))])
            if key_mask is not None:
                scores = np.where(key_mask, scores, -np.inf)
            w = softmax(scores)
            weights[h, i] = w
            out[i, cols] = sum(w[j] * v[j, cols] for j in range(len(k)))
    return linear(out, out_layer), weights


def cross_attention_ref(mha, query, kv):
    """Reference for MultiHeadAttention(query, kv) on unbatched numpy inputs."""
    return attention_loops(linear(query, mha.q_proj), linear(kv, mha.k_proj),
                           linear(kv, mha.v_proj), mha.n_heads, mha.out_proj)


def context_attention_ref(ca, query, kv, context, pool=False):
    """Reference for ContextAttention: gate K and V towards the projected context."""
    U_k, U_v = ca.U_k.detach().numpy(), ca.U_v.detach().numpy()
    W_k1, W_k2 = ca.W_k1.detach().numpy(), ca.W_k2.detach().numpy()
    W_v1, W_v2 = ca.W_v1.detach().numpy(), ca.W_v2.detach().numpy()
    if pool or len(context) != len(kv):
        context = np.repeat(context.mean(0, keepdims=True), len(kv), axis=0)
    k, v = linear(kv, ca.attn.k_proj), linear(kv, ca.attn.v_proj)
    k_hat, v_hat = np.zeros_like(k), np.zeros_like(v)
    lam_k, lam_v = np.zeros(len(k)), np.zeros(len(v))
    for i in range(len(k)):
        cu_k, cu_v = context[i] @ U_k, context[i] @ U_v
        lam_k[i] = sigmoid(k[i] @ W_k1[:, 0] + cu_k @ W_k2[:, 0])
        lam_v[i] = sigmoid(v[i] @ W_v1[:, 0] + cu_v @ W_v2[:, 0])
        k_hat[i] = (1 - lam_k[i]) * k[i] + lam_k[i] * cu_k
        v_hat[i] = (1 - lam_v[i]) * v[i] + lam_v[i] * cu_v
    out, _ = attention_loops(linear(query, ca.attn.q_proj), k_hat, v_hat, ca.attn.n_heads,
                             ca.attn.out_proj)
    return out, lam_k, lam_v


def gated_fusion_ref(gate, T, V_out, A_out):
    W_v, W_a = gate.W_v.detach().numpy(), gate.W_a.detach().numpy()
    b_v, b_a = gate.b_v.detach().numpy(), gate.b_a.detach().numpy()
    w_v = sigmoid(np.hstack([T, V_out]) @ W_v + b_v)
    w_a = sigmoid(np.hstack([T, A_out]) @ W_a + b_a)
    return T + w_v * V_out + w_a * A_out


def atf_ref(atf, T, V, A):
    """The four ATF stages composed by hand."""
    V_align, _ = cross_attention_ref(atf.align_v, V, T)
    A_align, _ = cross_attention_ref(atf.align_a, A, T)
    V_con, _, _ = context_attention_ref(atf.context_sa_v, T, T, V_align, pool=True)
    A_con, _, _ = context_attention_ref(atf.context_sa_a, T, T, A_align, pool=True)
    V_out, _, _ = context_attention_ref(atf.context_ca_v, T, V_con, A_con)
    A_out, _, _ = context_attention_ref(atf.context_ca_a, T, A_con, V_con)
    return gated_fusion_ref(atf.gate, T, V_out, A_out)


# -- gradients -----------------------------------------------------------------


def finite_difference_check(fn, tensors, probes, h=1e-5, floor=1e-5):
    """Max relative error between autograd and central differences.

    ``fn()`` returns a scalar built from ``tensors``; ``probes`` is a list of
    (tensor index, flat element index).  The denominator is floored so
    entries whose true gradient is ~0 are judged on absolute error: at h=1e-5
    the difference quotient itself carries round-off of order eps*|f|/h ~ 1e-10.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic = [float(tensors[i].grad.reshape(-1)[j]) for i, j in probes]
    worst = 0.0
    with torch.no_grad():
        for (i, j), a in zip(probes, analytic):
            flat = tensors[i].data.view(-1)
            orig = float(flat[j])
            flat[j] = orig + h
            up = float(fn())
            flat[j] = orig - h
            down = float(fn())
            flat[j] = orig
            numeric = (up - down) / (2 * h)
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
    return worst


def random_probes(tensors, n, gen: np.random.Generator):
    sizes = np.array([t.numel() for t in tensors])
    flat = gen.choice(int(sizes.sum()), size=min(n, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    probes = []
    for f in flat:
        i = int(np.searchsorted(offsets, f, side="right") - 1)
        probes.append((i, int(f - offsets[i])))
    return probes


# -- metrics -------------------------------------------------------------------


def classification_report_brute(preds, labels):
    """Confusion-matrix route to accuracy and support-weighted P/R/F1."""
    classes = sorted(set(labels) | set(preds))
    n = len(labels)
    acc = sum(p == y for p, y in zip(preds, labels)) / n
    wp = wr = wf = 0.0
    for c in classes:
        tp = sum(1 for p, y in zip(preds, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(preds, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(preds, labels) if p != c and y == c)
        support = tp + fn
        if support == 0:
            continue
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / support
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        wp += prec * support / n
        wr += rec * support / n
        wf += f1 * support / n
    return acc, wp, wr, wf


def lcs_brute(a, b):
    """Longest common subsequence by exhaustive subsequence search (short inputs only)."""
    subs_b = set()
    for r in range(len(b) + 1):
        subs_b.update(itertools.combinations(b, r))
    for r in range(len(a), -1, -1):
        for sub in itertools.combinations(a, r):
            if sub in subs_b:
                return r
    return 0


def clipped_overlap(cand, ref, n):
    grams = lambda s: Counter(tuple(s[i:i + n]) for i in range(len(s) - n + 1))
    c, r = grams(cand), grams(ref)
    return sum(min(v, r[g]) for g, v in c.items()), sum(c.values()), sum(r.values())


# -- clustering ----------------------------------------------------------------


def brute_force_2means(x):
    """Globally optimal 2-partition of the rows of ``x`` by exhaustive search."""
    n = len(x)
    best, best_labels = np.inf, None
    for mask in range(1, 2 ** (n - 1)):
        labels = np.array([(mask >> i) & 1 for i in range(n)])
        cost = sum(((x[labels == j] - x[labels == j].mean(0)) ** 2).sum() for j in (0, 1))
        if cost < best - 1e-12:
            best, best_labels = cost, labels
    return best, best_labels


def optimal_1d_kmeans(t, k):
    """Exact k-means on sorted scalars by dynamic programming over contiguous blocks.

    Returns the list of (start, stop) blocks of the optimal partition.
    """
    t = np.asarray(t, dtype=np.float64)
    n = len(t)

    def sse(i, j):
        seg = t[i:j]
        return ((seg - seg.mean()) ** 2).sum()

    cost = np.full((k + 1, n + 1), np.inf)
    back = np.zeros((k + 1, n + 1), dtype=int)
    cost[0, 0] = 0.0
    for m in range(1, k + 1):
        for j in range(m, n + 1):
            for i in range(m - 1, j):
                c = cost[m - 1, i] + sse(i, j)
                if c < cost[m, j]:
                    cost[m, j], back[m, j] = c, i
    blocks, j = [], n
    for m in range(k, 0, -1):
        i = back[m, j]
        blocks.append((i, j))
        j = i
    return blocks[::-1]
