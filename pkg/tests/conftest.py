from __future__ import annotations

import json

import numpy as np
import pytest

from dmmcs.corpus import Corpus, Example
from dmmcs.embeddings import EmbeddingTable


@pytest.fixture
def tiny_table() -> EmbeddingTable:
    """Hand-picked 2-d vectors with known pairwise cosines."""
    vectors = {
        "east": np.array([1.0, 0.0]),
        "north": np.array([0.0, 1.0]),
        "west": np.array([-1.0, 0.0]),
        "steep": np.array([0.6, 0.8]),
        "flat": np.array([2.0, 0.0]),
    }
    return EmbeddingTable(dim=2, vectors=vectors)


@pytest.fixture
def tiny_corpus() -> Corpus:
    return Corpus((
        Example(id="a", tags=("east",), caption="east north", split="train"),
        Example(id="b", tags=("east", "north"), caption="steep flat", split="train"),
        Example(id="c", tags=("north",), caption="north", split="train"),
        Example(id="d", tags=("east",), caption="west", split="test"),
    ))


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


@pytest.fixture
def corpus_file(tmp_path):
    rows = [
        {"id": "r1", "tags": ["CT"], "caption": "Head of pancreas.", "split": "train"},
        {"id": "r2", "tags": ["CT", "CT"], "caption": "X-Ray CT", "split": "val"},
        {"id": "r3", "tags": [], "caption": "clear image"},
    ]
    return write_jsonl(tmp_path / "corpus.jsonl", rows)
