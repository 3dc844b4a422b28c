"""Detection and generation metrics on token sequences."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Optional, Sequence


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GenerationReport:
    rouge1: float
    rouge2: float
    rougeL: float
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    meteor: Optional[float] = None  # not computed
    bertscore: Optional[float] = None  # not computed

    def to_dict(self) -> dict:
        return asdict(self)


def classification_report(preds: Sequence[int], labels: Sequence[int]) -> ClassificationReport:
    """Accuracy plus support-weighted precision, recall and F1.

    A class never predicted gets precision 0; a class absent from ``labels``
    has zero weight.
    """
    if len(preds) != len(labels):
        raise ValueError(f"length mismatch: {len(preds)} predictions, {len(labels)} labels")
    if not preds:
        raise ValueError("empty input")
    n = len(labels)
    support = Counter(labels)
    predicted = Counter(preds)
    hits = Counter(p for p, y in zip(preds, labels) if p == y)
    wp = wr = wf = 0.0
    for cls, sup in support.items():
        tp = hits[cls]
        precision = tp / predicted[cls] if predicted[cls] else 0.0
        recall = tp / sup
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        wp += sup * precision
        wr += sup * recall
        wf += sup * f1
    return ClassificationReport(sum(hits.values()) / n, wp / n, wr / n, wf / n)


def ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _f1(overlap: float, n_cand: int, n_ref: int) -> float:
    if overlap == 0 or n_cand == 0 or n_ref == 0:
        return 0.0
    p, r = overlap / n_cand, overlap / n_ref
    return 2 * p * r / (p + r)


def rouge_n(candidate: Sequence, reference: Sequence, n: int) -> float:
    """F1 of clipped n-gram overlap."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    overlap = sum((cand & ref).values())
    return _f1(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence, reference: Sequence) -> float:
    """F1 from the longest common subsequence."""
    if not reference:
        raise ValueError("empty reference")
    return _f1(lcs_length(candidate, reference), len(candidate), len(reference))


def bleu_n(candidates: Sequence[Sequence], references: Sequence[Sequence], n: int) -> float:
    """Corpus BLEU with uniform weights over 1..n-gram precisions and brevity penalty."""
    if len(candidates) != len(references):
        raise ValueError("candidate and reference corpora differ in size")
    cand_len = sum(len(c) for c in candidates)
    if cand_len == 0:
        return 0.0
    ref_len = sum(len(r) for r in references)
    log_p = 0.0
    for k in range(1, n + 1):
        matched = total = 0
        for c, r in zip(candidates, references):
            cg = ngrams(c, k)
            matched += sum((cg & ngrams(r, k)).values())
            total += sum(cg.values())
        if matched == 0:
            return 0.0
        log_p += math.log(matched / total) / n
    bp = 1.0 if cand_len > ref_len else math.exp(1 - ref_len / cand_len)
    return bp * math.exp(log_p)


def generation_report(candidates: Sequence[Sequence], references: Sequence[Sequence]) -> GenerationReport:
    """Corpus BLEU-1..4 and sentence ROUGE averaged over pairs."""
    if len(candidates) != len(references) or not candidates:
        raise ValueError("need equally sized, non-empty corpora")
    m = len(candidates)
    r1 = sum(rouge_n(c, r, 1) for c, r in zip(candidates, references)) / m
    r2 = sum(rouge_n(c, r, 2) for c, r in zip(candidates, references)) / m
    rl = sum(rouge_l(c, r) for c, r in zip(candidates, references)) / m
    bleus = [bleu_n(candidates, references, k) for k in range(1, 5)]
    return GenerationReport(r1, r2, rl, *bleus)
