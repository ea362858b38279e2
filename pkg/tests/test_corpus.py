from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmmcs.corpus import (
    Corpus,
    CorpusError,
    assign_splits,
    load_corpus,
    save_corpus,
    tokenize,
)

from .conftest import write_jsonl


class TestTokenize:
    def test_strips_edge_punctuation(self):
        assert tokenize("Head of pancreas.") == ["head", "of", "pancreas"]

    def test_keeps_internal_hyphen(self):
        assert tokenize("X-Ray CT") == ["x-ray", "ct"]

    def test_empty_string(self):
        assert tokenize("") == []

    def test_drops_pure_punct_tokens(self):
        assert tokenize("well , yes !") == ["well", "yes"]

    @given(st.text(max_size=80))
    def test_idempotent_on_own_output(self, text):
        once = tokenize(text)
        assert tokenize(" ".join(once)) == once


class TestLoadCorpus:
    def test_count_preserved(self, corpus_file):
        corpus = load_corpus(corpus_file)
        assert len(corpus) == 3

    def test_duplicate_tags_removed(self, corpus_file):
        corpus = load_corpus(corpus_file)
        by_id = {ex.id: ex for ex in corpus}
        assert by_id["r2"].tags == ("CT",)

    def test_missing_split_goes_to_train(self, corpus_file):
        corpus = load_corpus(corpus_file)
        by_id = {ex.id: ex for ex in corpus}
        assert by_id["r3"].split == "train"

    def test_missing_caption_names_line(self, tmp_path):
        path = write_jsonl(tmp_path / "bad.jsonl", [
            {"id": "x", "tags": [], "caption": "fine"},
            {"id": "y", "tags": []},
        ])
        with pytest.raises(CorpusError, match="line 2"):
            load_corpus(path)

    def test_duplicate_id_rejected(self, tmp_path):
        path = write_jsonl(tmp_path / "dup.jsonl", [
            {"id": "x", "tags": [], "caption": "one"},
            {"id": "x", "tags": [], "caption": "two"},
        ])
        with pytest.raises(CorpusError, match="duplicate id"):
            load_corpus(path)

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "broken.jsonl"
        path.write_text('{"id": "x", "tags": [], "caption": "ok"}\nnot json\n')
        with pytest.raises(CorpusError, match="line 2"):
            load_corpus(path)

    def test_round_trip(self, corpus_file, tmp_path):
        corpus = load_corpus(corpus_file)
        out = tmp_path / "copy.jsonl"
        save_corpus(corpus, out)
        assert load_corpus(out) == corpus


class TestSplits:
    def test_view_filters(self, corpus_file):
        corpus = load_corpus(corpus_file)
        assert corpus.split("val").ids() == ("r2",)

    def test_assign_splits_ratios(self, tmp_path):
        rows = [{"id": f"e{i}", "tags": [], "caption": "w"} for i in range(100)]
        corpus = load_corpus(write_jsonl(tmp_path / "c.jsonl", rows))
        split = assign_splits(corpus, seed=7)
        counts = {name: len(split.split(name)) for name in ("train", "val", "test")}
        assert counts == {"train": 75, "val": 10, "test": 15}

    def test_assign_splits_deterministic(self, tmp_path):
        rows = [{"id": f"e{i}", "tags": [], "caption": "w"} for i in range(40)]
        corpus = load_corpus(write_jsonl(tmp_path / "c.jsonl", rows))
        assert assign_splits(corpus, seed=3) == assign_splits(corpus, seed=3)
        assert assign_splits(corpus, seed=3) != assign_splits(corpus, seed=4)
