"""Model-internal quality estimates for pseudo bi-text and the loss weights built from them.

All batched functions take padded tensors plus boolean masks (True marks a
real position). Raw scores are "higher is better" and lie in [0, 1]
before softmax normalisation.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
ESTIMATORS = ("none", "cp", "js", "var")


@dataclass(frozen=True)
class EstimatorConfig:
    k: int = 2
    q_passes: int = 5
    use_ttq: bool = True
    use_stq: bool = True
    js_polarity: str = "confidence"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.q_passes < 2:
            raise ValueError("q_passes must be >= 2")
        if self.js_polarity not in ("confidence", "literal"):
            raise ValueError("js_polarity must be 'confidence' or 'literal'")


@dataclass
class QualityWeights:
    alpha: torch.Tensor  # (M, T), zero on padding
    beta: torch.Tensor   # (M,)
    estimator: str = "none"
    k: int = 2

    def alpha_lists(self, mask: torch.Tensor) -> List[List[float]]:
        return [row[m].tolist() for row, m in zip(self.alpha, mask)]

    def check(self, mask: torch.Tensor, tol: float = 1e-6) -> None:
        sums = self.alpha.sum(1)
        if not torch.allclose(sums, torch.ones_like(sums), atol=tol, rtol=0):
            raise AssertionError(f"token weights do not sum to 1: {sums}")
        if abs(float(self.beta.sum()) - 1.0) > tol:
            raise AssertionError(f"sentence weights sum to {float(self.beta.sum())}")
        if not (bool((self.alpha[mask] > 0).all()) and bool((self.beta > 0).all())):
            raise AssertionError("weights must be strictly positive")

    def records(self, step: int, mask: torch.Tensor, indices: Optional[Sequence[int]] = None):
        alphas = self.alpha_lists(mask)
        for i, (b, a) in enumerate(zip(self.beta.tolist(), alphas)):
            yield {"step": step, "sentence_idx": int(indices[i]) if indices is not None else i,
                   "beta": b, "alpha": a}


def _cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pairwise cosines (..., n, m); pairs involving a zero vector score 0."""
    dots = a @ b.transpose(-1, -2)
    denom = a.norm(dim=-1)[..., :, None] * b.norm(dim=-1)[..., None, :]
    safe = denom > 0
    return torch.where(safe, dots / torch.where(safe, denom, torch.ones_like(denom)),
                       torch.zeros_like(dots))


def ttq_batch(src: torch.Tensor, src_mask: torch.Tensor, hyp: torch.Tensor,
              hyp_mask: torch.Tensor, k: int) -> torch.Tensor:
    """Token quality: each source state's best cosine over hypothesis states, clamped, ** k."""
    sims = _cosine_matrix(src.to(torch.float64), hyp.to(torch.float64))
    sims = sims.masked_fill(~hyp_mask[:, None, :], float("-inf"))
    w = sims.max(dim=-1).values.clamp(0.0, 1.0)
    return (w ** k).masked_fill(~src_mask, 0.0)


def ttq(src_hidden: torch.Tensor, hyp_hidden: torch.Tensor, k: int) -> torch.Tensor:
    """Single sentence: (n, d) and (m, d) states -> (n,) raw token scores."""
    if len(src_hidden) == 0 or len(hyp_hidden) == 0:
        raise ValueError("empty hidden states")
    sm = torch.ones(1, len(src_hidden), dtype=torch.bool)
    hm = torch.ones(1, len(hyp_hidden), dtype=torch.bool)
    return ttq_batch(src_hidden[None], sm, hyp_hidden[None], hm, k)[0]


def _masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    m = mask.to(x.dtype)
    return (x * m[..., None]).sum(-2) / m.sum(-1, keepdim=True)


def stq_batch(src: torch.Tensor, src_mask: torch.Tensor, hyp: torch.Tensor,
              hyp_mask: torch.Tensor, k: int) -> torch.Tensor:
    """Sentence quality: cosine of mean states, clamped, ** k."""
    a = _masked_mean(src.to(torch.float64), src_mask)
    b = _masked_mean(hyp.to(torch.float64), hyp_mask)
    denom = a.norm(dim=-1) * b.norm(dim=-1)
    if bool((denom == 0).any()):
        logger.debug("zero-norm mean state in STQ; scoring 0")
    u = torch.where(denom > 0, (a * b).sum(-1) / torch.where(denom > 0, denom, torch.ones_like(denom)),
                    torch.zeros_like(denom))
    return u.clamp(0.0, 1.0) ** k


def stq(src_hidden: torch.Tensor, hyp_hidden: torch.Tensor, k: int) -> torch.Tensor:
    sm = torch.ones(1, len(src_hidden), dtype=torch.bool)
    hm = torch.ones(1, len(hyp_hidden), dtype=torch.bool)
    return stq_batch(src_hidden[None], sm, hyp_hidden[None], hm, k)[0]


def js_divergence(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """Jensen-Shannon divergence (natural log) along the last axis."""
    p = p.to(torch.float64)
    q = q.to(torch.float64)
    r = (p + q) / 2
    kl_p = (torch.xlogy(p, p) - torch.xlogy(p, r)).sum(-1)
    kl_q = (torch.xlogy(q, q) - torch.xlogy(q, r)).sum(-1)
    return 0.5 * kl_p + 0.5 * kl_q


def js_scores(pass1: torch.Tensor, pass2: torch.Tensor, k: int,
              mask: Optional[torch.Tensor] = None,
              polarity: str = "confidence") -> Tuple[torch.Tensor, torch.Tensor]:
    """Raw token and sentence scores from two dropout passes.

    Inputs are (T, V) for one sentence or (B, T, V) with a (B, T) mask.
    ``confidence`` maps each token's divergence to 1 - JS/ln 2; ``literal``
    scores by the divergence itself.
    """
    if pass1.shape != pass2.shape:
        raise ValueError(f"pass shapes differ: {tuple(pass1.shape)} vs {tuple(pass2.shape)}")
    single = pass1.dim() == 2
    if single:
        pass1, pass2 = pass1[None], pass2[None]
    if mask is None:
        mask = torch.ones(pass1.shape[:2], dtype=torch.bool)
    js = js_divergence(pass1, pass2)
    if polarity == "confidence":
        score = (1.0 - js / LN2).clamp(0.0, 1.0)
    elif polarity == "literal":
        score = js.clamp(0.0, LN2)
    else:
        raise ValueError(f"unknown polarity {polarity!r}")
    score = score.masked_fill(~mask, 0.0)
    tok = (score ** k).masked_fill(~mask, 0.0)
    sent = (score.sum(1) / mask.sum(1)) ** k
    return (tok[0], sent[0]) if single else (tok, sent)


def gold_probs(dist: torch.Tensor, gold: torch.Tensor) -> torch.Tensor:
    """Probability of the gold token at each position: (B, T, V), (B, T) -> (B, T)."""
    return dist.gather(-1, gold.unsqueeze(-1)).squeeze(-1).to(torch.float64)


def var_scores(passes: torch.Tensor, k: int,
               mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """Raw scores from the gold-token probabilities of Q dropout passes.

    ``passes`` is (Q, T) for one sentence or (Q, B, T). Confidence is
    1 - var / (max var in the sentence); a sentence with zero variance
    everywhere gets confidence 1.
    """
    passes = passes.to(torch.float64)
    if passes.shape[0] < 2:
        raise ValueError("need at least two passes")
    single = passes.dim() == 2
    if single:
        passes = passes[:, None]
    if mask is None:
        mask = torch.ones(passes.shape[1:], dtype=torch.bool)
    var = passes.var(dim=0, unbiased=False).masked_fill(~mask, 0.0)
    vmax = var.max(dim=1, keepdim=True).values
    conf = torch.where(vmax > 0, 1.0 - var / torch.where(vmax > 0, vmax, torch.ones_like(vmax)),
                       torch.ones_like(var)).masked_fill(~mask, 0.0)
    tok = (conf ** k).masked_fill(~mask, 0.0)
    sent = (conf.sum(1) / mask.sum(1)) ** k
    return (tok[0], sent[0]) if single else (tok, sent)


def normalize_weights(raw_alpha: Optional[torch.Tensor], raw_beta: Optional[torch.Tensor],
                      mask: torch.Tensor, use_ttq: bool = True, use_stq: bool = True,
                      estimator: str = "none", k: int = 2) -> QualityWeights:
    """Softmax token scores within each sentence and sentence scores over the batch.

    A disabled or missing level falls back to uniform weights (1/n, 1/M).
    """
    mask = mask.bool()
    if raw_alpha is None or not use_ttq:
        alpha = mask / mask.sum(1, keepdim=True).to(torch.float64)
    else:
        logits = raw_alpha.to(torch.float64).masked_fill(~mask, float("-inf"))
        alpha = torch.softmax(logits, dim=1).masked_fill(~mask, 0.0)
    M = mask.shape[0]
    if raw_beta is None or not use_stq:
        beta = torch.full((M,), 1.0 / M, dtype=torch.float64)
    else:
        beta = torch.softmax(raw_beta.to(torch.float64), dim=0)
    return QualityWeights(alpha, beta, estimator, k)


def weighted_batch_loss(losses: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    if losses.shape != beta.shape:
        raise ValueError(f"{tuple(losses.shape)} losses vs {tuple(beta.shape)} weights")
    return (losses * beta.to(losses.dtype)).sum()


def dump_weights(fh, step: int, weights: QualityWeights, mask: torch.Tensor,
                 indices: Optional[Sequence[int]] = None) -> None:
    for rec in weights.records(step, mask, indices):
        fh.write(json.dumps(rec) + "\n")
