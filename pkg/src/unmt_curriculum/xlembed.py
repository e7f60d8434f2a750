"""Cross-lingual word embeddings: loading, Procrustes alignment, cosine search."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import Vocabulary

logger = logging.getLogger(__name__)


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingMatrix:
    """One row per vocabulary id.

    ``present`` marks rows that came from the embedding file; the rest are
    seeded random fill-ins. Nearest-neighbour search only ranges over
    present rows, so fill-ins never act as members of the language space.
    """

    language: str
    rows: np.ndarray
    present: np.ndarray
    norms: np.ndarray
    missing: int = 0

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]

    @classmethod
    def from_rows(cls, language: str, rows: np.ndarray, present: Optional[np.ndarray] = None,
                  missing: int = 0) -> "EmbeddingMatrix":
        rows = np.ascontiguousarray(rows, dtype=np.float64)
        if rows.ndim != 2:
            raise EmbeddingError("rows must be a 2-d array")
        if present is None:
            present = np.ones(rows.shape[0], dtype=bool)
        rows.setflags(write=False)
        norms = np.linalg.norm(rows, axis=1)
        norms.setflags(write=False)
        return cls(language, rows, np.asarray(present, dtype=bool), norms, missing)


@dataclass(frozen=True)
class AlignedEmbeddings:
    source: EmbeddingMatrix
    target: EmbeddingMatrix
    mapping: np.ndarray

    def joint_rows(self) -> np.ndarray:
        """Rows for the shared vocabulary: mapped source where present, else target, else fill-in."""
        rows = self.source.rows.copy()
        take = ~self.source.present & self.target.present
        rows[take] = self.target.rows[take]
        return rows

    def space(self, side: str) -> Tuple[EmbeddingMatrix, EmbeddingMatrix]:
        """(query matrix, searched matrix) for words of ``side``."""
        if side == "source":
            return self.source, self.target
        if side == "target":
            return self.target, self.source
        raise ValueError(f"side must be 'source' or 'target', got {side!r}")


def random_unit_rows(count: int, dim: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((count, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def read_vec(path) -> Tuple[List[str], np.ndarray]:
    """Parse a fastText-style text file: header ``count dim`` then ``token v1 .. v_dim``."""
    with open(path, encoding="utf-8", errors="surrogateescape") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise EmbeddingError(f"{path}: malformed header {header!r}")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise EmbeddingError(f"{path}: malformed header {header!r}") from exc
        words, vectors = [], []
        for lineno, line in enumerate(f, start=2):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            if len(parts) - 1 != dim:
                raise EmbeddingError(
                    f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            words.append(parts[0])
            vectors.append(np.array(parts[1:], dtype=np.float64))
    if len(words) != count:
        logger.warning("%s: header announces %d vectors, found %d", path, count, len(words))
    matrix = np.vstack(vectors) if vectors else np.zeros((0, dim))
    return words, matrix


def write_vec(path, vectors: Dict[str, np.ndarray]) -> None:
    dim = len(next(iter(vectors.values())))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{len(vectors)} {dim}\n")
        for word, vec in vectors.items():
            f.write(word + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def matrix_from_vectors(vectors: Dict[str, np.ndarray], vocab: Vocabulary, language: str = "",
                        seed: int = 0, source: str = "vectors") -> EmbeddingMatrix:
    """Arrange word vectors by vocabulary id, filling absent tokens with seeded unit vectors."""
    dim = len(next(iter(vectors.values())))
    rows = random_unit_rows(len(vocab), dim, seed)
    present = np.zeros(len(vocab), dtype=bool)
    for word, vec in vectors.items():
        idx = vocab.ids.get(word)
        if idx is not None and idx >= vocab.num_specials:
            rows[idx] = vec
            present[idx] = True
    missing = int(len(vocab) - vocab.num_specials - present.sum())
    if missing:
        logger.info("%s: %d vocabulary tokens have no vector; using seeded random rows", source, missing)
    return EmbeddingMatrix.from_rows(language, rows, present, missing)


def load_embeddings(path, vocab: Vocabulary, language: str = "", seed: int = 0) -> EmbeddingMatrix:
    """Load vectors for every vocabulary token.

    Tokens absent from the file get a unit vector from a seeded spherical
    distribution; ``missing`` counts them.
    """
    words, matrix = read_vec(path)
    if not words:
        raise EmbeddingError(f"{path}: no vectors")
    return matrix_from_vectors(dict(zip(words, matrix)), vocab, language, seed, str(path))


def read_seed_dict(path) -> List[Tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            src, tgt = line.split("\t")
            pairs.append((src, tgt))
    return pairs


def write_seed_dict(path, pairs: Sequence[Tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for src, tgt in pairs:
            f.write(f"{src}\t{tgt}\n")


def procrustes_align(src: EmbeddingMatrix, tgt: EmbeddingMatrix,
                     seed_dict: Sequence[Tuple[int, int]]) -> AlignedEmbeddings:
    """Orthogonal W minimising ||XW - Y||_F over the seed pairs.

    ``seed_dict`` holds (source id, target id) pairs. With X^T Y = U S V^T
    the minimiser is W = U V^T.
    """
    if src.dim != tgt.dim:
        raise EmbeddingError(f"dimension mismatch: {src.dim} vs {tgt.dim}")
    if len(seed_dict) == 0:
        raise EmbeddingError("empty seed dictionary")
    si = np.array([s for s, _ in seed_dict])
    ti = np.array([t for _, t in seed_dict])
    X, Y = src.rows[si], tgt.rows[ti]
    rank = np.linalg.matrix_rank(X)
    if rank < src.dim:
        logger.warning("seed matrix is rank deficient (%d < %d); mapping is not unique",
                       rank, src.dim)
    u, _, vt = np.linalg.svd(X.T @ Y)
    W = u @ vt
    mapped = EmbeddingMatrix.from_rows(src.language, src.rows @ W, src.present, src.missing)
    return AlignedEmbeddings(mapped, tgt, W)


def seed_ids(pairs: Sequence[Tuple[str, str]], vocab: Vocabulary) -> List[Tuple[int, int]]:
    out = [(vocab.ids[s], vocab.ids[t]) for s, t in pairs if s in vocab and t in vocab]
    if len(out) < len(pairs):
        logger.warning("%d seed pairs dropped (token not in vocabulary)", len(pairs) - len(out))
    return out


def nearest_cosine(query: np.ndarray, matrix: EmbeddingMatrix) -> Tuple[int, float]:
    """Exact arg-max cosine over present, non-zero rows. Ties go to the lowest id."""
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (matrix.dim,):
        raise EmbeddingError(f"query has shape {query.shape}, expected ({matrix.dim},)")
    qn = np.linalg.norm(query)
    if qn == 0:
        raise EmbeddingError("zero-norm query")
    usable = matrix.present & (matrix.norms > 0)
    if not usable.any():
        raise EmbeddingError("no non-zero rows to search")
    dots = matrix.rows @ query
    cos = np.full(len(matrix), -np.inf)
    cos[usable] = dots[usable] / (matrix.norms[usable] * qn)
    best = int(np.argmax(cos))
    return best, float(cos[best])

