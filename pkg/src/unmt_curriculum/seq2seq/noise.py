from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ..corpus import BLANK_ID


@dataclass(frozen=True)
class NoiseConfig:
    drop_prob: float = 0.1
    blank_prob: float = 0.1
    shuffle_window: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("drop_prob", "blank_prob"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must be in [0, 1)")
        if self.shuffle_window < 1:
            raise ValueError("shuffle_window must be >= 1")

    @property
    def is_identity(self) -> bool:
        return self.drop_prob == 0 and self.blank_prob == 0 and self.shuffle_window == 1


def corrupt(sentence: Sequence[int], noise: NoiseConfig,
            rng: Optional[np.random.Generator] = None) -> List[int]:
    """Local shuffle, then word dropout, then blanking.

    Shuffling sorts positions perturbed by U[0, window) noise, so a token
    moves at most window - 1 places. At least one token always survives
    dropout.
    """
    if len(sentence) == 0:
        raise ValueError("empty sentence")
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    tokens = list(sentence)
    n = len(tokens)
    if noise.shuffle_window > 1:
        keys = np.arange(n) + rng.uniform(0, noise.shuffle_window, size=n)
        tokens = [tokens[i] for i in np.argsort(keys, kind="stable")]
    if noise.drop_prob > 0:
        keep = rng.random(n) >= noise.drop_prob
        if not keep.any():
            keep[rng.integers(n)] = True
        tokens = [t for t, k in zip(tokens, keep) if k]
    if noise.blank_prob > 0:
        blank = rng.random(len(tokens)) < noise.blank_prob
        tokens = [BLANK_ID if b else t for t, b in zip(tokens, blank)]
    return tokens
