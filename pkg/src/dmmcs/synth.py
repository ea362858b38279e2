"""Synthetic tagged-caption corpora with controlled tag expression strengths.

Each condition tag gets a dedicated embedding direction and a planted
explicitness level: its captions contain an "expression" word whose cosine
with the tag direction sits at that level (give or take a small jitter so
the per-tag distributions are not point masses).  One tag is never
expressed at all, and the most explicit tag is sometimes mentioned
verbatim.  Filler words live in orthogonal directions, so every planted
similarity is exact by construction.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Example
from .embeddings import EmbeddingTable

FILLERS = (
    "the", "scan", "shows", "a", "clear", "image", "of",
    "patient", "region", "study", "noted", "exam",
)
GROUPS = ("xray", "ct", "mri", "ultrasound")

_VARIANT_OFFSETS = {"a": -0.02, "b": 0.0, "c": 0.02}
# Mid variant twice as likely, so the sample median lands on the level.
_VARIANT_DRAW = "abbc"
_VERBATIM_RATE = 0.4


@dataclass(frozen=True)
class SyntheticData:
    corpus: Corpus
    table: EmbeddingTable
    requests: tuple[dict, ...]
    noisy_requests: tuple[dict, ...] | None
    levels: dict[str, float]


def planted_levels(num_tags: int) -> list[float]:
    """One never-expressed tag, the rest spanning [0.3, 0.98]."""
    if num_tags < 2:
        raise ValueError("need at least 2 tags")
    spread = np.linspace(0.3, 0.98, num_tags - 1)
    return [0.0] + [float(x) for x in spread]


def _build_table(num_tags: int, levels) -> EmbeddingTable:
    dim = 2 * num_tags + 4
    vectors: dict[str, np.ndarray] = {}

    def unit(axis: int) -> np.ndarray:
        v = np.zeros(dim)
        v[axis] = 1.0
        return v

    for i in range(num_tags):
        vectors[f"cond{i}"] = unit(i)
        for variant, offset in _VARIANT_OFFSETS.items():
            c = min(levels[i] + offset, 1.0)
            v = c * unit(i) + math.sqrt(max(0.0, 1.0 - c * c)) * unit(num_tags + i)
            vectors[f"sign{i}{variant}"] = v
    for j, word in enumerate(FILLERS):
        vectors[word] = unit(2 * num_tags + j % 4)
    return EmbeddingTable(dim=dim, vectors=vectors)


def _caption(rng: random.Random, tag_ids, levels, top_tag: int) -> str:
    tokens = [rng.choice(FILLERS), rng.choice(FILLERS)]
    for i in tag_ids:
        if levels[i] == 0.0:
            continue
        if i == top_tag and rng.random() < _VERBATIM_RATE:
            tokens.append(f"cond{i}")
        else:
            tokens.append(f"sign{i}{rng.choice(_VARIANT_DRAW)}")
    tokens.append(rng.choice(FILLERS))
    return " ".join(tokens)


def _corrupt(rng: random.Random, tags, all_tags, drop: float, add: float):
    noisy = [t for t in tags if rng.random() >= drop]
    if add > 0 and rng.random() < add:
        extra = [t for t in all_tags if t not in tags]
        if extra:
            noisy.append(rng.choice(extra))
    return noisy


def generate_synthetic(
    num_tags: int = 8,
    train_examples: int = 500,
    val_examples: int = 50,
    test_examples: int = 100,
    seed: int = 0,
    tag_drop: float = 0.0,
    tag_add: float = 0.0,
) -> SyntheticData:
    rng = random.Random(seed)
    levels = planted_levels(num_tags)
    tags = [f"cond{i}" for i in range(num_tags)]
    top_tag = num_tags - 1
    table = _build_table(num_tags, levels)

    examples = []
    counter = 0
    for split, count in (("train", train_examples), ("val", val_examples),
                         ("test", test_examples)):
        for _ in range(count):
            k = rng.randint(1, min(3, num_tags))
            tag_ids = sorted(rng.sample(range(num_tags), k))
            examples.append(Example(
                id=f"ex{counter:05d}",
                tags=tuple(tags[i] for i in tag_ids),
                caption=_caption(rng, tag_ids, levels, top_tag),
                group=rng.choice(GROUPS),
                split=split,
            ))
            counter += 1
    corpus = Corpus(tuple(examples))

    requests = tuple(
        {"id": ex.id, "tags": list(ex.tags), "gold_caption": ex.caption}
        for ex in corpus.split("test")
    )
    noisy_requests = None
    if tag_drop > 0 or tag_add > 0:
        noisy_requests = tuple(
            {"id": ex.id, "tags": _corrupt(rng, list(ex.tags), tags, tag_drop, tag_add),
             "gold_caption": ex.caption}
            for ex in corpus.split("test")
        )
    return SyntheticData(
        corpus=corpus,
        table=table,
        requests=requests,
        noisy_requests=noisy_requests,
        levels={tags[i]: levels[i] for i in range(num_tags)},
    )
