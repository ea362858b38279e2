"""Training-side tag statistics: per-tag similarity distributions and medians.

For every tag, the training captions associated with it yield a sample of
maximum-cosine-similarity (MCS) values; the sample's median is the tag's
target expression strength used by the decoding penalty.  Full samples are
retained because the histogram-divergence weighting needs the training-side
ECDF per tag.
"""

from __future__ import annotations

import json
import logging
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus, tokenize
from .embeddings import EmbeddingTable, TagEmbedding, UncoverableTagError, cosine, embed_tag

logger = logging.getLogger(__name__)


class StatsError(ValueError):
    """Missing or inconsistent tag statistics."""


def median(sorted_values: list[float]) -> float:
    """Median of an ascending list; even counts average the two middles."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("median of empty sample")
    mid = n // 2
    if n % 2 == 1:
        return sorted_values[mid]
    return (sorted_values[mid - 1] + sorted_values[mid]) / 2


def mcs(tag_emb: TagEmbedding, caption_tokens, table: EmbeddingTable):
    """Maximum cosine similarity between the tag and any caption token.

    Out-of-vocabulary tokens contribute no candidate to the max.  Returns
    ``None`` when no caption token is in vocabulary (undefined MCS);
    callers decide how to treat that case.
    """
    best = None
    for tok in caption_tokens:
        vec = table.get(tok)
        if vec is None:
            continue
        sim = cosine(tag_emb.vector, vec)
        if best is None or sim > best:
            best = sim
    return best


@dataclass(frozen=True)
class TagStats:
    """Per-tag sample of MCS values (ascending) and its median."""

    tag: str
    mmcs: float
    samples: tuple[float, ...]
    support: int

    def __post_init__(self):
        if self.support != len(self.samples) or self.support < 1:
            raise StatsError(f"tag {self.tag!r}: support must equal sample count >= 1")
        if any(b < a for a, b in zip(self.samples, self.samples[1:])):
            raise StatsError(f"tag {self.tag!r}: samples not sorted")


@dataclass(frozen=True)
class StatsStore:
    embedding_dim: int
    per_tag: dict[str, TagStats]
    default_mmcs: float | None

    def __contains__(self, tag: str) -> bool:
        return tag in self.per_tag

    def __len__(self) -> int:
        return len(self.per_tag)


def _default_mmcs(per_tag: dict[str, TagStats]):
    if not per_tag:
        return None
    return median(sorted(stats.mmcs for stats in per_tag.values()))


def make_store(embedding_dim: int, per_tag: dict[str, TagStats]) -> StatsStore:
    """Build a store, recomputing the unknown-tag fallback median."""
    return StatsStore(
        embedding_dim=embedding_dim,
        per_tag=dict(per_tag),
        default_mmcs=_default_mmcs(per_tag),
    )


def build_stats(corpus: Corpus, table: EmbeddingTable, tokenizer=tokenize) -> StatsStore:
    """Per-tag MCS distributions over the train split.

    Captions with no in-vocabulary token are skipped (their MCS is
    undefined); tags left with zero usable captions, and tags whose own
    tokens are all out of vocabulary, are omitted with a warning.
    """
    train = corpus.split("train")
    if len(train) == 0:
        raise StatsError("empty train split")

    tag_captions: dict[str, list[list[str]]] = {}
    skipped_captions = 0
    for ex in train:
        tokens = tokenizer(ex.caption)
        for tag in ex.tags:
            tag_captions.setdefault(tag, []).append(tokens)

    per_tag: dict[str, TagStats] = {}
    for tag in sorted(tag_captions):
        try:
            tag_emb = embed_tag(tag, table, tokenizer)
        except UncoverableTagError:
            logger.warning("tag %r has no in-vocabulary token; omitted from statistics", tag)
            continue
        samples = []
        for tokens in tag_captions[tag]:
            value = mcs(tag_emb, tokens, table)
            if value is None:
                skipped_captions += 1
                continue
            samples.append(value)
        if not samples:
            logger.warning("tag %r has no caption with defined MCS; omitted", tag)
            continue
        samples.sort()
        per_tag[tag] = TagStats(
            tag=tag, mmcs=median(samples), samples=tuple(samples), support=len(samples)
        )
    if skipped_captions:
        logger.info("skipped %d captions with no in-vocabulary token", skipped_captions)
    return make_store(table.dim, per_tag)


def lookup_mmcs(store: StatsStore, tag: str) -> float:
    """Target strength for a tag; unknown tags fall back to the store median."""
    stats = store.per_tag.get(tag)
    if stats is not None:
        return stats.mmcs
    if store.default_mmcs is None:
        raise StatsError("no statistics available")
    return store.default_mmcs


def ecdf_eval(samples, x: float) -> float:
    """Empirical CDF of an ascending sample at x: fraction of samples <= x."""
    if len(samples) == 0:
        raise ValueError("ECDF of empty sample")
    return bisect_right(samples, x) / len(samples)


def quartile_report(store: StatsStore) -> list[dict]:
    """Per-tag {q1, median, q3} summary rows, sorted by median."""
    rows = []
    for stats in store.per_tag.values():
        s = list(stats.samples)
        n = len(s)
        q1 = median(s[: (n + 1) // 2])
        q3 = median(s[n // 2 :])
        rows.append({"tag": stats.tag, "q1": q1, "median": stats.mmcs, "q3": q3,
                     "support": stats.support})
    rows.sort(key=lambda r: (r["median"], r["tag"]))
    return rows


def save_stats(store: StatsStore, path: str | Path) -> None:
    payload = {
        "embedding_dim": store.embedding_dim,
        "default_mmcs": store.default_mmcs,
        "tags": [
            {
                "tag": stats.tag,
                "mmcs": stats.mmcs,
                "support": stats.support,
                "samples": list(stats.samples),
            }
            for stats in sorted(store.per_tag.values(), key=lambda s: s.tag)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, sort_keys=True, indent=None)
        fh.write("\n")


def load_stats(path: str | Path) -> StatsStore:
    """Load a stats file, re-sorting samples and validating the medians."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    per_tag: dict[str, TagStats] = {}
    for row in payload["tags"]:
        samples = sorted(float(x) for x in row["samples"])
        got = median(samples)
        if got != row["mmcs"]:
            raise StatsError(
                f"tag {row['tag']!r}: stored mmcs {row['mmcs']} != median of samples {got}"
            )
        per_tag[row["tag"]] = TagStats(
            tag=row["tag"], mmcs=row["mmcs"], samples=tuple(samples), support=row["support"]
        )
    store = make_store(int(payload["embedding_dim"]), per_tag)
    stored_default = payload.get("default_mmcs")
    if per_tag and stored_default != store.default_mmcs:
        raise StatsError(
            f"stored default_mmcs {stored_default} != median of medians {store.default_mmcs}"
        )
    return store
