"""Action-diverse keyframe selection from per-frame embeddings.

Candidate frames are spread evenly over the clip (or repeated when the clip
is shorter than the candidate budget), time-weighted, clustered with
k-means, and each cluster contributes the member closest to its centroid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_ITER = 100


@dataclass(frozen=True, eq=False)
class KeyframeSelection:
    indices: np.ndarray  # (k,) original frame indices, ascending
    embeddings: np.ndarray  # (k, d_e) rows of the input at ``indices``
    candidates: np.ndarray  # (c,) candidate frame indices
    labels: np.ndarray  # (c,) cluster of each candidate, -1 when no clustering ran
    centroids: np.ndarray  # (k, feature) cluster centres in time-weighted space
    chosen: np.ndarray  # (k,) candidate positions picked, aligned with ``indices``
    cluster_of: np.ndarray  # (k,) cluster id of each pick, aligned with ``indices``


def candidate_indices(n_total: int, c: int) -> np.ndarray:
    """Exactly ``c`` frame indices in [0, n_total - 1].

    Short clips repeat each frame floor(c/n) or ceil(c/n) times in order;
    otherwise indices are rounded evenly spaced points.
    """
    if n_total < 1 or c < 1:
        raise ValueError("n_total and c must be >= 1")
    if n_total < c:
        return (np.arange(c) * n_total) // c
    return np.round(np.linspace(0, n_total - 1, c)).astype(np.int64)


def _sq_dists(x: np.ndarray, centres: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - centres[None, :, :]) ** 2).sum(-1)


def kmeans(x: np.ndarray, k: int, rng: np.random.Generator,
           weights: np.ndarray | None = None, max_iter: int = MAX_ITER):
    """Weighted k-means++ seeding then Lloyd iterations until assignments settle.

    An emptied cluster is re-seeded with the point farthest from its own
    centre, taken from a cluster that keeps at least one other member.
    Assignment ties go to the lowest cluster index.
    """
    n = len(x)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    centres = np.empty((k, x.shape[1]))
    centres[0] = x[rng.choice(n, p=w / w.sum())]
    closest = _sq_dists(x, centres[:1])[:, 0]
    for j in range(1, k):
        mass = w * closest
        pick = rng.choice(n, p=mass / mass.sum()) if mass.sum() > 0 else rng.integers(n)
        centres[j] = x[pick]
        closest = np.minimum(closest, _sq_dists(x, centres[j:j + 1])[:, 0])
    labels = np.full(n, -1)
    for _ in range(max_iter):
        new = _sq_dists(x, centres).argmin(1)
        for j in range(k):
            if np.any(new == j):
                continue
            sizes = np.bincount(new, minlength=k)
            own = ((x - centres[new]) ** 2).sum(-1)
            own[sizes[new] < 2] = -1.0
            new[int(own.argmax())] = j
        if np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            m = labels == j
            centres[j] = (w[m, None] * x[m]).sum(0) / w[m].sum()
    return labels, centres


def time_weighted(features: np.ndarray, timestamps: np.ndarray, alpha: float,
                  time_mode: str = "broadcast") -> np.ndarray:
    """``broadcast`` adds alpha*t to every coordinate; ``append`` adds one alpha*t column."""
    if time_mode == "broadcast":
        return features + alpha * timestamps[:, None]
    if time_mode == "append":
        return np.hstack([features, alpha * timestamps[:, None]])
    raise ValueError(f"unknown time mode {time_mode!r}")


def select_keyframes(frames: np.ndarray, k: int = 100, c: int = 500, alpha: float = 0.1,
                     rng: np.random.Generator | int | None = 0,
                     time_mode: str = "broadcast",
                     timestamps: np.ndarray | None = None) -> KeyframeSelection:
    """Pick ``k`` keyframes out of ``c`` candidates by time-weighted k-means.

    ``timestamps`` (one per frame) defaults to ``i / n_total``.  Fewer than
    ``k`` distinct candidate points (e.g. identical frames with alpha=0)
    leave the clustering meaningless; the picks are then spread evenly
    over the distinct candidates and ``labels``/``cluster_of`` are -1.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or len(frames) == 0:
        raise ValueError("frames must be a non-empty n_total x d_e matrix")
    if not np.isfinite(frames).all():
        raise ValueError("non-finite frame embeddings")
    n_total = len(frames)
    if k < 1 or k > c:
        raise ValueError(f"need 1 <= k <= c, got k={k}, c={c}")
    if k > n_total:
        raise ValueError(f"cannot pick {k} distinct keyframes from {n_total} frames")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    if timestamps is None:
        timestamps = np.arange(n_total) / n_total
    timestamps = np.asarray(timestamps, dtype=np.float64)
    if timestamps.shape != (n_total,):
        raise ValueError(f"need one timestamp per frame, got shape {timestamps.shape}")
    cand = candidate_indices(n_total, c)
    feats = time_weighted(frames[cand], timestamps[cand], alpha, time_mode)
    # Repeated candidates are identical points: cluster each distinct point
    # once, weighted by multiplicity, so copies never split across clusters.
    points, inverse, counts = np.unique(feats, axis=0, return_inverse=True,
                                        return_counts=True)
    inverse = inverse.reshape(-1)
    if len(points) < k:
        # Not enough distinct points to form k clusters: spread picks evenly.
        distinct = np.unique(cand)
        picks = distinct[np.round(np.linspace(0, len(distinct) - 1, k)).astype(int)]
        chosen = np.searchsorted(cand, picks)
        return KeyframeSelection(picks, frames[picks], cand, np.full(c, -1),
                                 feats[chosen], chosen, np.full(k, -1))

    point_labels, centres = kmeans(points, k, rng, weights=counts)
    labels = point_labels[inverse]
    chosen = np.empty(k, dtype=np.int64)
    for j in range(k):
        members = np.flatnonzero(labels == j)
        dist = np.linalg.norm(feats[members] - centres[j], axis=1)
        chosen[j] = members[int(np.argmin(dist))]  # first minimum: lowest position wins
    order = np.argsort(cand[chosen], kind="stable")
    chosen = chosen[order]
    indices = cand[chosen]
    return KeyframeSelection(indices, frames[indices], cand, labels, centres, chosen, order)
