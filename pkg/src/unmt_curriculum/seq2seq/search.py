"""Greedy and beam decoding."""

from __future__ import annotations

from typing import Callable, List, Optional, Sequence

import torch

from ..corpus import BLANK_ID, BOS_ID, EOS_ID, PAD_ID, UNK_ID
from .model import Seq2Seq, source_batch

NEVER_EMIT = (PAD_ID, UNK_ID, BOS_ID, BLANK_ID)


def output_ban(vocab_size: int, allowed: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Boolean (V,) mask of tokens the decoder may not produce."""
    ban = torch.zeros(vocab_size, dtype=torch.bool)
    if allowed is not None:
        ban |= ~allowed
    ban[list(NEVER_EMIT)] = True
    ban[EOS_ID] = False
    return ban


def length_caps(sentences: Sequence[Sequence[int]], model_max: int,
                max_len: Optional[int] = None) -> List[int]:
    if max_len is not None:
        return [min(max_len, model_max)] * len(sentences)
    return [min(model_max, int(1.5 * len(s)) + 5) for s in sentences]


def _next_logprobs(logits: torch.Tensor, ban: torch.Tensor, step: int) -> torch.Tensor:
    logp = torch.log_softmax(logits.to(torch.float64), dim=-1)
    logp = logp.masked_fill(ban, float("-inf"))
    if step == 1:
        logp[:, EOS_ID] = float("-inf")
    return logp


@torch.no_grad()
def greedy_translate(model: Seq2Seq, sentences: Sequence[Sequence[int]], src_lang: int,
                     tgt_lang: int, max_len: Optional[int] = None,
                     allowed: Optional[torch.Tensor] = None) -> List[List[int]]:
    """Arg-max decoding in inference mode. Outputs exclude the end symbol and are never empty."""
    B = len(sentences)
    memory, pad = model.encode(source_batch(sentences), src_lang)
    caps = length_caps(sentences, model.cfg.max_len, max_len)
    ban = output_ban(model.cfg.vocab_size, allowed)
    out: List[List[int]] = [[] for _ in range(B)]
    active = torch.arange(B)
    ys = torch.full((B, 1), BOS_ID, dtype=torch.long)
    step = 0
    while active.numel():
        step += 1
        logits = model.decode(memory[active], pad[active], ys, tgt_lang)[:, -1]
        nxt = _next_logprobs(logits, ban, step).argmax(-1)
        keep = []
        for row, (b, tok) in enumerate(zip(active.tolist(), nxt.tolist())):
            if tok == EOS_ID:
                continue
            out[b].append(tok)
            if step < caps[b]:
                keep.append(row)
        keep_t = torch.as_tensor(keep, dtype=torch.long)
        ys = torch.cat([ys, nxt[:, None]], dim=1)[keep_t]
        active = active[keep_t]
    return out


StepFn = Callable[[List[int], torch.Tensor, int], torch.Tensor]


def beam_search(step_fn: StepFn, num_sentences: int, beam_size: int, length_penalty: float,
                caps: Sequence[int]) -> List[List[int]]:
    """Length-normalised beam search over a batch of independent inputs.

    ``step_fn(rows, prefixes, step)`` returns float64 log-probabilities
    (N, V) for N live hypotheses; ``rows[i]`` is the input index of
    hypothesis i and ``prefixes`` its tokens so far, starting with the
    begin symbol. A hypothesis finishes on the end symbol or at its length
    cap and keeps its slot, so live hypotheses plus finished ones never
    exceed ``beam_size`` per input; beam_size=1 is exactly greedy search.
    Finished hypotheses are ranked by logP / len**length_penalty, len
    counting the end symbol when present. Ties go to the earlier finisher.
    """
    live = [[((), 0.0)] for _ in range(num_sentences)]
    finished: List[list] = [[] for _ in range(num_sentences)]
    step = 0
    while any(live):
        step += 1
        rows = [b for b in range(num_sentences) for _ in live[b]]
        prefixes = torch.tensor([(BOS_ID,) + toks for b in range(num_sentences)
                                 for toks, _ in live[b]], dtype=torch.long)
        logp = step_fn(rows, prefixes, step)
        V = logp.shape[1]
        offset = 0
        for b in range(num_sentences):
            hyps = live[b]
            if not hyps:
                continue
            block = logp[offset:offset + len(hyps)]
            offset += len(hyps)
            base = torch.tensor([s for _, s in hyps], dtype=torch.float64)
            flat = (base[:, None] + block).flatten()
            slots = beam_size - len(finished[b])
            order = torch.sort(flat, descending=True, stable=True).indices[:slots].tolist()
            nxt = []
            for idx in order:
                score = float(flat[idx])
                if score == float("-inf"):
                    break
                h, v = divmod(idx, V)
                toks = hyps[h][0] + (v,)
                if v == EOS_ID or step >= caps[b]:
                    finished[b].append((toks, score))
                else:
                    nxt.append((toks, score))
            live[b] = nxt
    results = []
    for hyps in finished:
        best = max(range(len(hyps)),
                   key=lambda i: (hyps[i][1] / len(hyps[i][0]) ** length_penalty, -i))
        toks = list(hyps[best][0])
        if toks and toks[-1] == EOS_ID:
            toks.pop()
        results.append(toks)
    return results


@torch.no_grad()
def beam_translate(model: Seq2Seq, sentences: Sequence[Sequence[int]], src_lang: int,
                   tgt_lang: int, beam_size: int = 4, length_penalty: float = 1.0,
                   max_len: Optional[int] = None,
                   allowed: Optional[torch.Tensor] = None) -> List[List[int]]:
    memory, pad = model.encode(source_batch(sentences), src_lang)
    ban = output_ban(model.cfg.vocab_size, allowed)

    def step_fn(rows, prefixes, step):
        idx = torch.as_tensor(rows, dtype=torch.long)
        logits = model.decode(memory[idx], pad[idx], prefixes, tgt_lang)[:, -1]
        return _next_logprobs(logits, ban, step)

    caps = length_caps(sentences, model.cfg.max_len, max_len)
    return beam_search(step_fn, len(sentences), beam_size, length_penalty, caps)
