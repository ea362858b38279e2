"""Tagged caption corpora: loading, tokenization, and split views.

The corpus file format is JSON-lines, one object per line with keys
``id`` (string), ``tags`` (array of strings), ``caption`` (string),
optional ``group`` (string) and optional ``split`` ("train"|"val"|"test").
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

SPLITS = ("train", "val", "test")

# Stripped from token edges only; internal occurrences (e.g. hyphens) survive.
_EDGE_PUNCT = ".,;:!?()[]{}\"'`/\\<>|~*+=_&^%$#@"


class CorpusError(ValueError):
    """Malformed corpus file or record."""


@dataclass(frozen=True)
class Example:
    """One tagged caption.

    ``tags`` is the gold tag set of the underlying image; duplicates are
    removed on load.  ``group`` carries an optional grouping key (e.g. a
    modality label) for per-group evaluation.
    """

    id: str
    tags: tuple[str, ...]
    caption: str
    group: str | None = None
    split: str = "train"


@dataclass(frozen=True)
class Corpus:
    examples: tuple[Example, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def split(self, name: str) -> "Corpus":
        """View containing only the examples of one split."""
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return Corpus(tuple(ex for ex in self.examples if ex.split == name))

    def ids(self) -> tuple[str, ...]:
        return tuple(ex.id for ex in self.examples)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties.

    Deterministic; never emits reserved control tokens.  Internal
    punctuation (hyphens in particular) is preserved: "X-Ray CT" becomes
    ["x-ray", "ct"].
    """
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(_EDGE_PUNCT)
        if tok:
            tokens.append(tok)
    return tokens


def _dedup(items) -> tuple[str, ...]:
    seen = set()
    out = []
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return tuple(out)


def _parse_record(obj: dict, lineno: int) -> Example:
    for key in ("id", "tags", "caption"):
        if key not in obj:
            raise CorpusError(f"line {lineno}: record missing {key!r}")
    if not isinstance(obj["id"], str) or not obj["id"]:
        raise CorpusError(f"line {lineno}: id must be a non-empty string")
    if not isinstance(obj["tags"], list) or any(not isinstance(t, str) for t in obj["tags"]):
        raise CorpusError(f"line {lineno}: tags must be an array of strings")
    if not isinstance(obj["caption"], str):
        raise CorpusError(f"line {lineno}: caption must be a string")
    split = obj.get("split", "train")
    if split not in SPLITS:
        raise CorpusError(f"line {lineno}: split must be one of {SPLITS}, got {split!r}")
    group = obj.get("group")
    if group is not None and not isinstance(group, str):
        raise CorpusError(f"line {lineno}: group must be a string")
    return Example(
        id=obj["id"],
        tags=_dedup(obj["tags"]),
        caption=obj["caption"],
        group=group,
        split=split,
    )


def load_corpus(path: str | Path) -> Corpus:
    """Load a JSON-lines corpus file.

    Records missing a ``split`` field go to train.  Raises
    :class:`CorpusError` naming the line number on malformed records and
    on duplicate ids.
    """
    examples = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"line {lineno}: record must be a JSON object")
            ex = _parse_record(obj, lineno)
            if ex.id in seen_ids:
                raise CorpusError(f"line {lineno}: duplicate id {ex.id!r}")
            seen_ids.add(ex.id)
            examples.append(ex)
    return Corpus(tuple(examples))


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus back to JSON-lines (round-trips with load_corpus)."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in corpus:
            obj = {"id": ex.id, "tags": list(ex.tags), "caption": ex.caption}
            if ex.group is not None:
                obj["group"] = ex.group
            obj["split"] = ex.split
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")


def assign_splits(corpus: Corpus, seed: int, ratios=(0.75, 0.10, 0.15)) -> Corpus:
    """Random train/val/test assignment with the given ratios.

    Counts are floor(n*train), floor(n*val), remainder to test, over a
    seeded shuffle of the examples; original ordering is preserved in the
    returned corpus.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    n = len(corpus)
    order = list(range(n))
    random.Random(seed).shuffle(order)
    n_train = int(n * ratios[0])
    n_val = int(n * ratios[1])
    assignment = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            assignment[idx] = "train"
        elif rank < n_train + n_val:
            assignment[idx] = "val"
        else:
            assignment[idx] = "test"
    examples = tuple(
        replace(ex, split=assignment[i]) for i, ex in enumerate(corpus.examples)
    )
    return Corpus(examples)
