"""Vocabulary, monolingual corpora and the synthetic language pair."""

from __future__ import annotations

import configparser
import logging
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS, BLANK = "<pad>", "<unk>", "<s>", "</s>", "<blank>"
SPECIALS = (PAD, UNK, BOS, EOS, BLANK)
PAD_ID, UNK_ID, BOS_ID, EOS_ID, BLANK_ID = range(len(SPECIALS))

DEFAULT_MAX_LEN = 100


class CorpusError(ValueError):
    pass


class Vocabulary:
    """Bijective token <-> id map. Special symbols occupy the lowest ids."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens: List[str] = list(SPECIALS)
        self.ids: Dict[str, int] = {tok: i for i, tok in enumerate(SPECIALS)}
        for tok in tokens:
            if tok in self.ids:
                raise ValueError(f"duplicate token {tok!r}")
            self.ids[tok] = len(self.tokens)
            self.tokens.append(tok)

    pad = PAD_ID
    unk = UNK_ID
    bos = BOS_ID
    eos = EOS_ID
    blank = BLANK_ID

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    @property
    def num_specials(self) -> int:
        return len(SPECIALS)

    def encode(self, words: Sequence[str]) -> List[int]:
        return [self.ids.get(w, UNK_ID) for w in words]

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for tok in self.tokens[len(SPECIALS):]:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls(line.rstrip("\n") for line in f if line.strip())


@dataclass
class MonoCorpus:
    language: str
    sentences: List[Tuple[int, ...]]
    vocab: Optional[Vocabulary] = field(default=None, repr=False, compare=False)
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.sentences)

    def lengths(self) -> np.ndarray:
        return np.array([len(s) for s in self.sentences], dtype=np.int64)

    def save(self, path) -> None:
        if self.vocab is None:
            raise CorpusError("corpus has no vocabulary to decode with")
        write_sentences(path, (self.vocab.decode(s) for s in self.sentences))


def write_sentences(path, sentences: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for words in sentences:
            f.write(" ".join(words) + "\n")


def _read_lines(path) -> List[List[str]]:
    try:
        with open(path, encoding="utf-8") as f:
            return [line.split() for line in f]
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc


def load_corpus(path, vocab: Vocabulary, language: str,
                max_len: int = DEFAULT_MAX_LEN) -> MonoCorpus:
    """Read a whitespace-tokenized corpus, one sentence per line.

    Sentences longer than ``max_len`` are dropped and counted; blank lines
    are skipped. Raises CorpusError if nothing survives.
    """
    sentences = []
    dropped = 0
    for words in _read_lines(path):
        if not words:
            continue
        if len(words) > max_len:
            dropped += 1
            continue
        sentences.append(tuple(vocab.encode(words)))
    if dropped:
        logger.info("%s: dropped %d sentences longer than %d tokens", path, dropped, max_len)
    if not sentences:
        raise CorpusError(f"{path}: corpus is empty after filtering")
    return MonoCorpus(language, sentences, vocab, dropped)


def count_tokens(paths: Sequence) -> Counter:
    counts: Counter = Counter()
    for path in paths:
        for words in _read_lines(path):
            counts.update(words)
    return counts


def build_vocab(paths: Sequence, min_count: int = 1) -> Vocabulary:
    """Joint vocabulary over all files, ordered by descending frequency then token."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = count_tokens(paths)
    kept = [(tok, c) for tok, c in counts.items() if c >= min_count and tok not in SPECIALS]
    if not kept:
        raise CorpusError(f"no tokens occur at least {min_count} times")
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    return Vocabulary(tok for tok, _ in kept)


# ---------------------------------------------------------------------------
# Synthetic language pair
# ---------------------------------------------------------------------------

def reorder(tokens: Sequence) -> list:
    """Swap adjacent tokens at even positions: (0,1), (2,3), ...

    An odd trailing token stays put. The rule is an involution.
    """
    out = list(tokens)
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


@dataclass
class SyntheticPairSpec:
    vocab_size: int = 200
    zipf_exponent: float = 1.0
    sentence_length_range: Tuple[int, int] = (3, 12)
    num_sentences: int = 5000
    num_gold: int = 400
    seed: int = 0
    # Explicit source-rank -> target-index permutation; drawn from the seed when None.
    lexicon: Optional[Tuple[int, ...]] = None
    src_lang: str = "src"
    tgt_lang: str = "tgt"
    # "phrase": positions alternate between two word classes, starting with the
    # first, so the adjacent swap is visible in the target's word order.
    # "iid": every position drawn independently (word order carries no signal).
    word_order: str = "phrase"

    def __post_init__(self):
        if self.word_order not in ("phrase", "iid"):
            raise ValueError("word_order must be 'phrase' or 'iid'")
        if self.vocab_size < 20:
            raise ValueError("vocab_size must be >= 20")
        lo, hi = self.sentence_length_range
        if not 1 <= lo <= hi:
            raise ValueError("bad sentence_length_range")
        self.sentence_length_range = (int(lo), int(hi))
        if self.lexicon is not None:
            lex = tuple(int(x) for x in self.lexicon)
            if sorted(lex) != list(range(self.vocab_size)):
                raise ValueError("lexicon must be a permutation of range(vocab_size)")
            self.lexicon = lex

    @classmethod
    def from_config(cls, path, section: str = "synthetic") -> "SyntheticPairSpec":
        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise CorpusError(f"cannot read config {path}")
        if section not in parser:
            raise CorpusError(f"{path}: missing [{section}] section")
        raw = parser[section]
        kwargs = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            val = raw[f.name]
            if f.name in ("vocab_size", "num_sentences", "num_gold", "seed"):
                kwargs[f.name] = int(val)
            elif f.name == "zipf_exponent":
                kwargs[f.name] = float(val)
            elif f.name in ("sentence_length_range", "lexicon"):
                kwargs[f.name] = tuple(int(x) for x in val.replace(",", " ").split())
            else:
                kwargs[f.name] = val
        return cls(**kwargs)


def src_token(rank: int) -> str:
    return f"s{rank}"


def tgt_token(index: int) -> str:
    return f"t{index}"


class SyntheticPair:
    """Generated language pair: two non-parallel corpora plus held-out gold pairs."""

    def __init__(self, spec: SyntheticPairSpec):
        self.spec = spec
        root = np.random.SeedSequence(spec.seed)
        lex_ss, src_ss, tgt_ss, gold_ss = root.spawn(4)
        if spec.lexicon is None:
            lexicon = np.random.default_rng(lex_ss).permutation(spec.vocab_size)
            self.lexicon = tuple(int(x) for x in lexicon)
        else:
            self.lexicon = spec.lexicon
        V = spec.vocab_size
        self.vocab = Vocabulary([src_token(r) for r in range(V)] + [tgt_token(i) for i in range(V)])
        ranks = np.arange(1, V + 1, dtype=np.float64)
        probs = ranks ** -spec.zipf_exponent
        self.zipf_probs = probs / probs.sum()

        self.word_class = self._assign_classes()
        src_words = self._sample(np.random.default_rng(src_ss), spec.num_sentences)
        tgt_words = [self.translate_words(s) for s in
                     self._sample(np.random.default_rng(tgt_ss), spec.num_sentences)]
        gold_src = self._sample(np.random.default_rng(gold_ss), spec.num_gold)

        enc = self.vocab.encode
        self.source = MonoCorpus(spec.src_lang, [tuple(enc(s)) for s in src_words], self.vocab)
        self.target = MonoCorpus(spec.tgt_lang, [tuple(enc(s)) for s in tgt_words], self.vocab)
        self.gold = [(tuple(enc(s)), tuple(enc(self.translate_words(s)))) for s in gold_src]

    def _assign_classes(self) -> np.ndarray:
        """Split ranks into two classes whose probability mass matches their share of positions.

        Class 0 fills even positions and class 1 odd ones. Ranks are handed
        out greedily, most frequent first, to the class furthest below its
        target mass, so the marginal token distribution stays Zipfian.
        """
        lo, hi = self.spec.sentence_length_range
        lengths = np.arange(lo, hi + 1)
        share0 = np.ceil(lengths / 2).sum() / lengths.sum()
        targets = np.array([share0, 1 - share0])
        mass = np.zeros(2)
        classes = np.zeros(self.spec.vocab_size, dtype=np.int64)
        for r, p in enumerate(self.zipf_probs):
            c = int(np.argmin(mass / targets))
            classes[r] = c
            mass[c] += p
        return classes

    def _sample(self, rng: np.random.Generator, count: int) -> List[List[str]]:
        lo, hi = self.spec.sentence_length_range
        lengths = rng.integers(lo, hi + 1, size=count)
        total = int(lengths.sum())
        if self.spec.word_order == "iid":
            flat = rng.choice(self.spec.vocab_size, size=total, p=self.zipf_probs)
        else:
            position = np.concatenate([np.arange(n) for n in lengths]) % 2
            flat = np.empty(total, dtype=np.int64)
            for c in (0, 1):
                members = np.flatnonzero(self.word_class == c)
                probs = self.zipf_probs[members] / self.zipf_probs[members].sum()
                slots = np.flatnonzero(position == c)
                flat[slots] = rng.choice(members, size=slots.size, p=probs)
        out, pos = [], 0
        for n in lengths:
            out.append([src_token(int(r)) for r in flat[pos:pos + n]])
            pos += n
        return out

    def translate_words(self, words: Sequence[str]) -> List[str]:
        return reorder([tgt_token(self.lexicon[int(w[1:])]) for w in words])

    def translate_ids(self, ids: Sequence[int]) -> List[int]:
        return self.vocab.encode(self.translate_words(self.vocab.decode(ids)))

    def lexicon_pairs(self) -> List[Tuple[str, str]]:
        return [(src_token(r), tgt_token(t)) for r, t in enumerate(self.lexicon)]

    def embeddings(self, dim: int = 64, noise_min: float = 0.1, noise_max: float = 0.5,
                   seed: Optional[int] = None) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
        """Monolingual word vectors for both sides.

        Each lexicon pair shares a latent unit vector. Each side adds
        independent Gaussian noise whose scale grows linearly with the
        source frequency rank, so rare words are harder to align. The
        target side is then rotated by a random orthogonal matrix, so a
        mapping must be learned before the spaces are comparable.
        """
        rng = np.random.default_rng(self.spec.seed + 7919 if seed is None else seed)
        V = self.spec.vocab_size
        latent = rng.standard_normal((V, dim))
        latent /= np.linalg.norm(latent, axis=1, keepdims=True)
        scale = noise_min + (noise_max - noise_min) * np.arange(V) / max(V - 1, 1)
        per_dim = (scale / np.sqrt(dim))[:, None]
        src_vecs = latent + per_dim * rng.standard_normal((V, dim))
        tgt_vecs = latent + per_dim * rng.standard_normal((V, dim))
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        rotation = q * np.sign(np.diag(r))
        tgt_vecs = tgt_vecs @ rotation
        src = {src_token(i): src_vecs[i] for i in range(V)}
        tgt = {tgt_token(self.lexicon[i]): tgt_vecs[i] for i in range(V)}
        return src, tgt


def generate_synthetic_pair(spec: SyntheticPairSpec):
    """Return ``(source_corpus, target_corpus, gold)`` for ``spec``.

    ``gold`` is a list of ``(source_ids, reference_translation_ids)`` pairs
    drawn independently of both monolingual corpora.
    """
    pair = SyntheticPair(spec)
    return pair.source, pair.target, pair.gold
