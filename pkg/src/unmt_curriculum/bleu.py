"""Corpus BLEU (multi-bleu conventions), smoothed sentence BLEU, difficulty buckets."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, List, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

MAX_ORDER = 4


def ngram_counts(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuReport:
    bleu: float
    precisions: List[float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int


def _stats(hyp, ref) -> Tuple[List[int], List[int]]:
    matches, totals = [], []
    for n in range(1, MAX_ORDER + 1):
        h, r = ngram_counts(hyp, n), ngram_counts(ref, n)
        matches.append(sum(min(c, r[g]) for g, c in h.items()))
        totals.append(max(len(hyp) - n + 1, 0))
    return matches, totals


def corpus_bleu(hypotheses: Sequence[Sequence], references: Sequence[Sequence]) -> BleuReport:
    """Unsmoothed 4-gram corpus BLEU on a 0-100 scale with a single reference per segment.

    Any zero n-gram precision yields 0, as multi-bleu.perl does.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not references:
        raise ValueError("no references")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        m, t = _stats(list(hyp), list(ref))
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        hyp_len += len(hyp)
        ref_len += len(ref)
    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    if hyp_len == 0:
        return BleuReport(0.0, precisions, 0.0, hyp_len, ref_len)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    if min(precisions) == 0:
        return BleuReport(0.0, precisions, bp, hyp_len, ref_len)
    log_avg = sum(math.log(p) for p in precisions) / MAX_ORDER
    return BleuReport(100.0 * bp * math.exp(log_avg), precisions, bp, hyp_len, ref_len)


def sentence_bleu(hyp: Sequence, ref: Sequence) -> float:
    """Sentence BLEU with add-one smoothing of the 2- to 4-gram precisions."""
    if len(hyp) == 0:
        return 0.0
    m, t = _stats(list(hyp), list(ref))
    if m[0] == 0:
        return 0.0
    log_p = math.log(m[0] / t[0])
    for n in range(1, MAX_ORDER):
        log_p += math.log((m[n] + 1) / (t[n] + 1))
    bp = 1.0 if len(hyp) > len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return 100.0 * bp * math.exp(log_p / MAX_ORDER)


@dataclass
class BucketReport:
    boundaries: List[Tuple[float, float]]
    counts: List[int]
    bleu_a: List[float]
    bleu_b: List[float]
    sentence_bleu_a: List[float] = field(default_factory=list)
    sentence_bleu_b: List[float] = field(default_factory=list)
    merged: int = 0

    @property
    def deltas(self) -> List[float]:
        return [b - a for a, b in zip(self.bleu_a, self.bleu_b)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["bucket", "low", "high", "count", "bleu_a", "bleu_b", "delta",
                        "sent_bleu_a", "sent_bleu_b"])
            for i, ((lo, hi), n, a, b, d, sa, sb) in enumerate(zip(
                    self.boundaries, self.counts, self.bleu_a, self.bleu_b, self.deltas,
                    self.sentence_bleu_a, self.sentence_bleu_b)):
                w.writerow([i, f"{lo:.6f}", f"{hi:.6f}", n, f"{a:.4f}", f"{b:.4f}",
                            f"{d:.4f}", f"{sa:.4f}", f"{sb:.4f}"])


def bucket_analysis(difficulties: Sequence[float], references: Sequence[Sequence],
                    outputs_a: Sequence[Sequence], outputs_b: Sequence[Sequence],
                    num_buckets: int = 5) -> BucketReport:
    """Split the test set into equal-count difficulty percentile buckets and compare two systems.

    Buckets that would be empty (more buckets than sentences) are dropped
    and counted in ``merged``.
    """
    n = len(references)
    if not (len(difficulties) == len(outputs_a) == len(outputs_b) == n):
        raise ValueError("difficulties, references and outputs must align")
    diffs = np.asarray(difficulties, dtype=np.float64)
    order = np.argsort(diffs, kind="stable")
    chunks = [c for c in np.array_split(order, num_buckets) if c.size]
    merged = num_buckets - len(chunks)
    if merged:
        logger.warning("%d empty buckets merged away", merged)
    report = BucketReport([], [], [], [], merged=merged)
    for chunk in chunks:
        refs = [references[i] for i in chunk]
        ha = [outputs_a[i] for i in chunk]
        hb = [outputs_b[i] for i in chunk]
        report.boundaries.append((float(diffs[chunk].min()), float(diffs[chunk].max())))
        report.counts.append(int(chunk.size))
        report.bleu_a.append(corpus_bleu(ha, refs).bleu)
        report.bleu_b.append(corpus_bleu(hb, refs).bleu)
        report.sentence_bleu_a.append(float(np.mean([sentence_bleu(h, r) for h, r in zip(ha, refs)])))
        report.sentence_bleu_b.append(float(np.mean([sentence_bleu(h, r) for h, r in zip(hb, refs)])))
    return report
