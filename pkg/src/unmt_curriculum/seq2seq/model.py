"""Shared transformer encoder-decoder for both translation directions.

One encoder and one decoder serve both languages; the language identity
enters through an added language embedding (XLM style). Input and output
token embeddings are tied. Dropout draws its masks from an explicit
``torch.Generator`` so every stochastic pass is reproducible; passing no
generator means inference mode.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..corpus import BOS_ID, EOS_ID, PAD_ID

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    feedforward_dim: int = 256
    dropout_rate: float = 0.1
    max_len: int = 100
    num_languages: int = 2
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError("model_dim must be divisible by heads")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def torch_dtype(self) -> torch.dtype:
        return getattr(torch, self.dtype)


def dropout(x: torch.Tensor, p: float, gen: Optional[torch.Generator]) -> torch.Tensor:
    if gen is None or p == 0:
        return x
    keep = torch.rand(x.shape, generator=gen, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


def _linear(d_in: int, d_out: int, gen: torch.Generator, dtype) -> nn.Linear:
    layer = nn.Linear(d_in, d_out, dtype=dtype)
    with torch.no_grad():
        layer.weight.copy_(torch.randn(d_out, d_in, generator=gen, dtype=dtype) / math.sqrt(d_in))
        layer.bias.zero_()
    return layer


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int, gen: torch.Generator, dtype):
        super().__init__()
        self.heads = heads
        self.q = _linear(dim, dim, gen, dtype)
        self.k = _linear(dim, dim, gen, dtype)
        self.v = _linear(dim, dim, gen, dtype)
        self.o = _linear(dim, dim, gen, dtype)

    def forward(self, x, memory, key_mask, causal: bool = False):
        B, T, D = x.shape
        S = memory.shape[1]
        h, dh = self.heads, D // self.heads
        q = self.q(x).view(B, T, h, dh).transpose(1, 2)
        k = self.k(memory).view(B, S, h, dh).transpose(1, 2)
        v = self.v(memory).view(B, S, h, dh).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        blocked = key_mask[:, None, None, :]
        if causal:
            future = torch.ones(T, S, dtype=torch.bool).triu(1)
            blocked = blocked | future[None, None]
        scores = scores.masked_fill(blocked, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, T, D)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int, gen, dtype):
        super().__init__()
        self.inp = _linear(dim, hidden, gen, dtype)
        self.out = _linear(hidden, dim, gen, dtype)

    def forward(self, x):
        return self.out(F.gelu(self.inp(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig, gen):
        super().__init__()
        d, dt = cfg.model_dim, cfg.torch_dtype
        self.ln_attn = nn.LayerNorm(d, dtype=dt)
        self.attn = MultiHeadAttention(d, cfg.heads, gen, dt)
        self.ln_ffn = nn.LayerNorm(d, dtype=dt)
        self.ffn = FeedForward(d, cfg.feedforward_dim, gen, dt)
        self.p = cfg.dropout_rate

    def forward(self, x, pad_mask, gen):
        y = self.ln_attn(x)
        x = x + dropout(self.attn(y, y, pad_mask), self.p, gen)
        x = x + dropout(self.ffn(self.ln_ffn(x)), self.p, gen)
        return x


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig, gen):
        super().__init__()
        d, dt = cfg.model_dim, cfg.torch_dtype
        self.ln_self = nn.LayerNorm(d, dtype=dt)
        self.self_attn = MultiHeadAttention(d, cfg.heads, gen, dt)
        self.ln_cross = nn.LayerNorm(d, dtype=dt)
        self.cross_attn = MultiHeadAttention(d, cfg.heads, gen, dt)
        self.ln_ffn = nn.LayerNorm(d, dtype=dt)
        self.ffn = FeedForward(d, cfg.feedforward_dim, gen, dt)
        self.p = cfg.dropout_rate

    def forward(self, x, tgt_pad, memory, src_pad, gen):
        y = self.ln_self(x)
        x = x + dropout(self.self_attn(y, y, tgt_pad, causal=True), self.p, gen)
        x = x + dropout(self.cross_attn(self.ln_cross(x), memory, src_pad), self.p, gen)
        x = x + dropout(self.ffn(self.ln_ffn(x)), self.p, gen)
        return x


class Seq2Seq(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(cfg.seed)
        d, dt = cfg.model_dim, cfg.torch_dtype
        scale = d ** -0.5
        self.tok_emb = nn.Parameter(torch.randn(cfg.vocab_size, d, generator=gen, dtype=dt) * scale)
        # +2 positions for the sentence-boundary symbols
        self.pos_emb = nn.Parameter(torch.randn(cfg.max_len + 2, d, generator=gen, dtype=dt) * scale)
        self.lang_emb = nn.Parameter(torch.randn(cfg.num_languages, d, generator=gen, dtype=dt) * scale)
        self.enc_emb_ln = nn.LayerNorm(d, dtype=dt)
        self.dec_emb_ln = nn.LayerNorm(d, dtype=dt)
        self.encoder = nn.ModuleList(EncoderLayer(cfg, gen) for _ in range(cfg.layers))
        self.decoder = nn.ModuleList(DecoderLayer(cfg, gen) for _ in range(cfg.layers))
        self.enc_ln = nn.LayerNorm(d, dtype=dt)
        self.dec_ln = nn.LayerNorm(d, dtype=dt)

    def _embed(self, ids, lang: int, ln, gen):
        T = ids.shape[1]
        if T > self.pos_emb.shape[0]:
            raise ValueError(f"sequence of length {T} exceeds positional table")
        x = self.tok_emb[ids] + self.pos_emb[:T] + self.lang_emb[lang]
        return dropout(ln(x), self.cfg.dropout_rate, gen)

    def encode(self, src: torch.Tensor, lang: int, gen: Optional[torch.Generator] = None):
        """Hidden states (B, S, d) and the source padding mask (B, S)."""
        pad = src.eq(PAD_ID)
        x = self._embed(src, lang, self.enc_emb_ln, gen)
        for layer in self.encoder:
            x = layer(x, pad, gen)
        return self.enc_ln(x), pad

    def decode(self, memory, src_pad, tgt_in: torch.Tensor, lang: int,
               gen: Optional[torch.Generator] = None) -> torch.Tensor:
        """Next-token logits (B, T, V) for a teacher-forced decoder input."""
        tgt_pad = tgt_in.eq(PAD_ID)
        x = self._embed(tgt_in, lang, self.dec_emb_ln, gen)
        for layer in self.decoder:
            x = layer(x, tgt_pad, memory, src_pad, gen)
        return self.dec_ln(x) @ self.tok_emb.t()

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


# ---------------------------------------------------------------------------
# Batching helpers
# ---------------------------------------------------------------------------

def pad_batch(seqs: Sequence[Sequence[int]]) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), PAD_ID, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    return out


def source_batch(sentences: Sequence[Sequence[int]]) -> torch.Tensor:
    """Encoder input: every sentence followed by the end symbol."""
    return pad_batch([list(s) + [EOS_ID] for s in sentences])


def target_batch(sentences: Sequence[Sequence[int]]) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(decoder input, gold output, mask). Gold positions are the tokens plus the end symbol."""
    tgt_in = pad_batch([[BOS_ID] + list(s) for s in sentences])
    tgt_out = pad_batch([list(s) + [EOS_ID] for s in sentences])
    return tgt_in, tgt_out, tgt_out.ne(PAD_ID)


def token_nll(model: Seq2Seq, memory, src_pad, sentences, lang: int,
              gen: Optional[torch.Generator] = None):
    """Per-position negative log-likelihood (B, T) of ``sentences`` and its mask."""
    tgt_in, tgt_out, mask = target_batch(sentences)
    logits = model.decode(memory, src_pad, tgt_in, lang, gen)
    logp = torch.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, tgt_out.unsqueeze(-1)).squeeze(-1)
    return nll.masked_fill(~mask, 0.0), mask


def uniform_token_weights(mask: torch.Tensor) -> torch.Tensor:
    n = mask.sum(1, keepdim=True).to(torch.float64)
    return (mask / n)


def decode_loss(model: Seq2Seq, memory, src_pad, sentences, lang: int,
                token_weights: Optional[torch.Tensor] = None,
                sentence_weights: Optional[torch.Tensor] = None,
                gen: Optional[torch.Generator] = None) -> torch.Tensor:
    """Weighted teacher-forced cross-entropy.

    Per sentence i: L_i = -sum_j alpha_ij log P(x_j | ...), with
    alpha_ij = 1/n_i when ``token_weights`` is None. The batch loss is
    sum_i beta_i L_i, with beta_i = 1/M when ``sentence_weights`` is None.
    Weight tensors are (B, T) and (B,), padded positions ignored.
    """
    nll, mask = token_nll(model, memory, src_pad, sentences, lang, gen)
    if token_weights is None:
        token_weights = uniform_token_weights(mask)
    token_weights = token_weights.to(nll.dtype) * mask
    per_sentence = (nll * token_weights).sum(1)
    if sentence_weights is None:
        sentence_weights = torch.full((len(sentences),), 1.0 / len(sentences), dtype=torch.float64)
    return (per_sentence * sentence_weights.to(nll.dtype)).sum()


def forward_distributions(model: Seq2Seq, sources, src_lang: int, targets, tgt_lang: int,
                          dropout_on: bool = False, seed: Optional[int] = None):
    """Force-decode ``targets``; returns per-position distributions (B, T, V) and mask.

    With ``dropout_on`` the whole pass (encoder and decoder) uses dropout
    masks drawn from ``seed``.
    """
    if dropout_on and seed is None:
        raise ValueError("dropout_on requires a seed")
    gen = torch.Generator().manual_seed(int(seed)) if dropout_on else None
    with torch.no_grad():
        memory, pad = model.encode(source_batch(sources), src_lang, gen)
        tgt_in, _, mask = target_batch(targets)
        probs = torch.softmax(model.decode(memory, pad, tgt_in, tgt_lang, gen), dim=-1)
    return probs, mask


def init_from_embeddings(model: Seq2Seq, rows: np.ndarray, first_id: int = 0,
                         project: bool = False, seed: int = 0) -> None:
    """Copy aligned word vectors into the token embedding table (ids >= ``first_id``).

    The copied block is rescaled by one scalar so its mean row norm is 1;
    cosines between rows are unchanged. When the embedding dimension
    differs from ``model_dim`` and ``project`` is set, rows are mapped
    through a seeded random matrix with orthonormal columns (cosine
    preserving when the embedding dimension is not larger).
    """
    rows = np.asarray(rows, dtype=np.float64)[first_id:]
    d = model.cfg.model_dim
    if rows.shape[1] != d:
        if not project:
            raise ValueError(f"embedding dim {rows.shape[1]} != model_dim {d}")
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((max(rows.shape[1], d), min(rows.shape[1], d)))
        q, _ = np.linalg.qr(a)
        proj = q if rows.shape[1] >= d else q.T
        rows = rows @ proj
    rows = rows / np.linalg.norm(rows, axis=1).mean()
    with torch.no_grad():
        model.tok_emb[first_id:first_id + len(rows)] = torch.as_tensor(rows, dtype=model.tok_emb.dtype)


def save_checkpoint(path, model: Seq2Seq, extra: Optional[dict] = None) -> None:
    torch.save({"format_version": CHECKPOINT_VERSION, "config": asdict(model.cfg),
                "state_dict": model.state_dict(), "extra": extra or {}}, path)


def load_checkpoint(path) -> Tuple[Seq2Seq, dict]:
    blob = torch.load(path, weights_only=False)
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {blob.get('format_version')}")
    model = Seq2Seq(ModelConfig(**blob["config"]))
    model.load_state_dict(blob["state_dict"])
    return model, blob["extra"]
