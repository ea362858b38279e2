"""Word-vector storage and the similarity primitives used everywhere.

The on-disk format is the common word-vector text layout: a header line
``<count> <dim>`` followed by one ``<word> <f1> ... <fdim>`` line per word.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class EmbeddingFormatError(ValueError):
    """Malformed word-vector file."""


class UncoverableTagError(ValueError):
    """Every token of a tag is out of vocabulary."""

    def __init__(self, tag: str):
        super().__init__(f"uncoverable tag: {tag!r} has no in-vocabulary token")
        self.tag = tag


@dataclass(frozen=True)
class EmbeddingTable:
    """Token -> dense vector map; all vectors have length ``dim``."""

    dim: int
    vectors: dict[str, np.ndarray]

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def __getitem__(self, token: str) -> np.ndarray:
        return self.vectors[token]

    def get(self, token: str):
        return self.vectors.get(token)

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass(frozen=True)
class TagEmbedding:
    """Centroid embedding of a tag's in-vocabulary tokens."""

    tag: str
    vector: np.ndarray
    covered_tokens: int


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Load a word-vector text file.

    Duplicate words keep the first occurrence.  A line whose float count
    does not match the header dimension raises
    :class:`EmbeddingFormatError` naming the line.
    """
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingFormatError("line 1: header must be '<count> <dim>'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise EmbeddingFormatError("line 1: header must be two integers") from exc
        if dim <= 0:
            raise EmbeddingFormatError("line 1: dimension must be positive")
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                if not line.strip():
                    continue
                raise EmbeddingFormatError(f"line {lineno}: expected '<word> <floats...>'")
            word = parts[0]
            if len(parts) - 1 != dim:
                raise EmbeddingFormatError(
                    f"line {lineno}: expected {dim} floats, found {len(parts) - 1}"
                )
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingFormatError(f"line {lineno}: invalid float") from exc
            if not np.all(np.isfinite(vec)):
                raise EmbeddingFormatError(f"line {lineno}: non-finite component")
            if word not in vectors:
                vectors[word] = vec
    if len(vectors) != count:
        logger.warning(
            "embedding header announced %d words, loaded %d", count, len(vectors)
        )
    return EmbeddingTable(dim=dim, vectors=vectors)


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table.vectors)} {table.dim}\n")
        for word, vec in table.vectors.items():
            fh.write(word + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity clamped to [-1, 1]; zero-norm vectors score 0.

    The zero-norm rule keeps inner decoding loops total: a zero vector
    carries no directional information.
    """
    if len(a) != len(b):
        raise ValueError(f"vector length mismatch: {len(a)} vs {len(b)}")
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        return 0.0
    value = float(np.dot(a, b)) / (na * nb)
    return max(-1.0, min(1.0, value))


def embed_tag(tag: str, table: EmbeddingTable, tokenizer) -> TagEmbedding:
    """Centroid (arithmetic mean) of the tag's in-vocabulary token vectors.

    Out-of-vocabulary tokens are skipped; a tag with no in-vocabulary
    token raises :class:`UncoverableTagError`.
    """
    covered = [table[tok] for tok in tokenizer(tag) if tok in table]
    if not covered:
        raise UncoverableTagError(tag)
    vector = np.mean(np.stack(covered), axis=0)
    return TagEmbedding(tag=tag, vector=vector, covered_tokens=len(covered))
