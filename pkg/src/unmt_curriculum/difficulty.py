"""Sentence difficulty criteria and minmax normalisation."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .corpus import MonoCorpus
from .xlembed import AlignedEmbeddings, nearest_cosine

logger = logging.getLogger(__name__)

CRITERIA = ("xling", "length", "rarity")


class TfidfModel:
    """Each sentence is one document; tf is the raw in-sentence count, idf = ln(N/df)."""

    def __init__(self, sentences: Sequence[Sequence[int]]):
        self.num_docs = len(sentences)
        self.doc_freq: Counter = Counter()
        for sent in sentences:
            self.doc_freq.update(set(sent))

    def idf(self, token: int) -> float:
        df = self.doc_freq.get(token, 0)
        if df == 0:
            return 0.0
        return math.log(self.num_docs / df)

    def weights(self, sentence: Sequence[int]) -> np.ndarray:
        """tf-idf of the token at each position of ``sentence``."""
        tf = Counter(sentence)
        return np.array([tf[t] * self.idf(t) for t in sentence], dtype=np.float64)


class WordDifficulty:
    """1 - max cosine from a word's vector to the opposite language space, cached per type."""

    def __init__(self, aligned: AlignedEmbeddings, side: str = "source"):
        self.query, self.space = aligned.space(side)
        self._cache: Dict[int, float] = {}

    def __call__(self, word_id: int) -> float:
        d = self._cache.get(word_id)
        if d is None:
            _, cos = nearest_cosine(self.query.rows[word_id], self.space)
            d = 1.0 - cos
            self._cache[word_id] = d
        return d


def word_difficulty(word_id: int, aligned: AlignedEmbeddings, side: str = "source") -> float:
    return WordDifficulty(aligned, side)(word_id)


def sentence_difficulty(sentence: Sequence[int], word_diff, tfidf: TfidfModel) -> float:
    """tf-idf weighted mean of word difficulties, times ln(n).

    ``word_diff`` is either AlignedEmbeddings (source side) or a callable
    id -> difficulty such as a WordDifficulty.
    """
    if isinstance(word_diff, AlignedEmbeddings):
        word_diff = WordDifficulty(word_diff)
    n = len(sentence)
    if n == 0:
        raise ValueError("empty sentence")
    weights = tfidf.weights(sentence)
    diffs = np.array([word_diff(t) for t in sentence])
    total = weights.sum()
    if total == 0:
        logger.debug("all tf-idf weights are zero; using uniform weights")
        weights = np.ones(n)
        total = float(n)
    return float((weights * diffs).sum() / total * math.log(n))


def length_difficulty(sentence: Sequence[int]) -> float:
    return float(len(sentence))


def unigram_probs(corpus: MonoCorpus, vocab_size: int) -> np.ndarray:
    """Add-one smoothed unigram distribution over the full vocabulary."""
    counts = np.zeros(vocab_size, dtype=np.float64)
    for sent in corpus.sentences:
        np.add.at(counts, list(sent), 1.0)
    return (counts + 1.0) / (counts.sum() + vocab_size)


def rarity_difficulty(sentence: Sequence[int], probs: np.ndarray) -> float:
    return float(-np.log(probs[list(sentence)]).sum())


def minmax(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


@dataclass
class DifficultyTable:
    criterion: str
    raw: np.ndarray
    normalized: np.ndarray

    def __len__(self) -> int:
        return len(self.raw)

    @classmethod
    def from_raw(cls, criterion: str, raw) -> "DifficultyTable":
        raw = np.asarray(raw, dtype=np.float64)
        return cls(criterion, raw, minmax(raw))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["sentence_index", "raw", "normalized"])
            for i, (r, n) in enumerate(zip(self.raw, self.normalized)):
                w.writerow([i, repr(float(r)), repr(float(n))])

    @classmethod
    def from_csv(cls, path, criterion: str = "xling") -> "DifficultyTable":
        raw, norm = [], []
        with open(path, newline="", encoding="utf-8") as f:
            for row in csv.DictReader(f):
                raw.append(float(row["raw"]))
                norm.append(float(row["normalized"]))
        return cls(criterion, np.array(raw), np.array(norm))


def build_table(corpus: MonoCorpus, criterion: str = "xling",
                aligned: Optional[AlignedEmbeddings] = None, side: str = "source",
                tfidf: Optional[TfidfModel] = None,
                probs: Optional[np.ndarray] = None) -> DifficultyTable:
    """Score every sentence under ``criterion`` and minmax-normalise.

    ``xling`` needs ``aligned`` (and uses ``side`` to pick which matrix the
    corpus words live in); ``rarity`` builds unigram probabilities from the
    corpus unless ``probs`` is given.
    """
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    if criterion == "xling":
        if aligned is None:
            raise ValueError("xling criterion needs aligned embeddings")
        tfidf = tfidf or TfidfModel(corpus.sentences)
        wd = WordDifficulty(aligned, side)
        raw = [sentence_difficulty(s, wd, tfidf) for s in corpus.sentences]
    elif criterion == "length":
        raw = [length_difficulty(s) for s in corpus.sentences]
    elif criterion == "rarity":
        if probs is None:
            size = len(corpus.vocab) if corpus.vocab is not None else 1 + max(max(s) for s in corpus.sentences)
            probs = unigram_probs(corpus, size)
        raw = [rarity_difficulty(s, probs) for s in corpus.sentences]
    else:
        raise ValueError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")
    return DifficultyTable.from_raw(criterion, raw)
