"""Shared test fixtures: tiny vocabularies and a supervised copy/translation model."""

import numpy as np
import torch

from unmt_curriculum.corpus import Vocabulary
from unmt_curriculum.seq2seq import ModelConfig, Seq2Seq, decode_loss, source_batch


def tiny_vocab(n_src=8, n_tgt=8):
    return Vocabulary([f"s{i}" for i in range(n_src)] + [f"t{i}" for i in range(n_tgt)])


def random_sentences(rng, ids, count, lo=2, hi=5):
    return [tuple(int(x) for x in rng.choice(ids, size=rng.integers(lo, hi + 1))) for _ in range(count)]


def fit_translator(pairs, vocab_size, src_lang=0, tgt_lang=1, steps=400, seed=0, dim=32,
                   lr=3e-3, batch=64):
    """Supervised training of a small model on (source, target) pairs."""
    torch.manual_seed(seed)
    cfg = ModelConfig(vocab_size=vocab_size, layers=2, heads=4, model_dim=dim,
                      feedforward_dim=4 * dim, dropout_rate=0.0, max_len=20, seed=seed)
    model = Seq2Seq(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    for _ in range(steps):
        idx = rng.choice(len(pairs), size=batch)
        src = [pairs[i][0] for i in idx]
        tgt = [pairs[i][1] for i in idx]
        memory, pad = model.encode(source_batch(src), src_lang)
        loss = decode_loss(model, memory, pad, tgt, tgt_lang)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return model
