from __future__ import annotations

import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmmcs.corpus import tokenize
from dmmcs.decoding import (
    DecodeError,
    DecodingConfig,
    Hypothesis,
    PenaltyContext,
    build_penalty_context,
    combine_scores,
    combine_scores_hd,
    decode,
    dmmcs_penalty,
    histogram_divergence,
    ks_statistic,
    normalize_pool,
)
from dmmcs.embeddings import EmbeddingTable
from dmmcs.tag_stats import TagStats, make_store, mcs, median
from dmmcs.embeddings import embed_tag

from .oracles import (
    brute_best_combined,
    brute_ks,
    brute_seq_mcs,
    contains_phrase,
    random_toy_model,
)

NEG_INF = float("-inf")


def hyp(tag_mcs, tokens=(), nll=0.0):
    return Hypothesis(tokens=tuple(tokens), raw_nll=nll, finished=False,
                      tag_mcs=tuple(tag_mcs))


class TestNormalizePool:
    def test_endpoints(self):
        assert normalize_pool([2.0, 4.0]) == [1.0, 0.0]

    def test_all_equal_maps_to_one(self):
        assert normalize_pool([3.0, 3.0, 3.0]) == [1.0, 1.0, 1.0]

    def test_linear(self):
        assert normalize_pool([1.0, 2.0, 3.0]) == [1.0, 0.5, 0.0]

    @given(st.lists(st.floats(min_value=0, max_value=1e6), min_size=1, max_size=20))
    def test_bounded_and_order_reversing(self, nlls):
        goodness = normalize_pool(nlls)
        assert all(0.0 <= g <= 1.0 for g in goodness)
        for i in range(len(nlls)):
            for j in range(len(nlls)):
                if nlls[i] < nlls[j]:
                    assert goodness[i] >= goodness[j]


class TestCombine:
    def test_alpha_zero_is_decoder_only(self):
        assert combine_scores(0.0, 0.7, 0.25) == pytest.approx(0.75)

    def test_alpha_one_is_penalty_only(self):
        assert combine_scores(1.0, 0.7, 0.25) == 0.7

    def test_mixture(self):
        assert combine_scores(0.5, 0.2, 0.8) == pytest.approx(0.2)

    def test_hd_zero_keeps_penalty_term(self):
        assert combine_scores_hd(0.5, 0.0, 0.2, 0.8) == pytest.approx(0.1)

    def test_hd_one_keeps_decoder_term(self):
        assert combine_scores_hd(0.5, 1.0, 0.2, 0.8) == pytest.approx(0.1)

    def test_hd_mixture(self):
        got = combine_scores_hd(0.5, 0.5, 0.4, 0.6)
        assert got == pytest.approx(0.25 * 0.4 + 0.25 * 0.4)


class TestPenalty:
    def test_single_tag_squared_gap(self):
        ctx = PenaltyContext(tags=["t"], targets=[0.6])
        assert dmmcs_penalty(ctx, hyp([0.9])) == pytest.approx(0.09)

    def test_zero_distance(self):
        ctx = PenaltyContext(tags=["t", "u"], targets=[0.5, 0.7])
        assert dmmcs_penalty(ctx, hyp([0.5, 0.7])) == 0.0

    def test_mean_over_tags(self):
        ctx = PenaltyContext(tags=["t", "u"], targets=[0.2, 0.4])
        assert dmmcs_penalty(ctx, hyp([0.4, 0.8])) == pytest.approx(0.10)

    def test_uncovered_prefix_counts_as_zero(self):
        ctx = PenaltyContext(tags=["t"], targets=[0.6])
        assert dmmcs_penalty(ctx, hyp([NEG_INF])) == pytest.approx(0.36)

    def test_empty_tag_set_is_zero(self):
        assert dmmcs_penalty(PenaltyContext(), hyp([])) == 0.0


class TestKs:
    def test_identical_samples(self):
        assert ks_statistic([0.1, 0.4, 0.4], [0.1, 0.4, 0.4]) == 0.0

    def test_disjoint_point_masses(self):
        assert ks_statistic([0.0], [1.0]) == 1.0

    def test_interleaved(self):
        assert ks_statistic([0.1, 0.5], [0.5, 0.9]) == 0.5

    def test_matches_brute_force_on_random_pairs(self):
        rng = random.Random(21)
        for _ in range(200):
            a = sorted(rng.uniform(0, 1) for _ in range(rng.randint(1, 12)))
            b = sorted(rng.uniform(0, 1) for _ in range(rng.randint(1, 12)))
            assert ks_statistic(a, b) == pytest.approx(brute_ks(a, b), abs=1e-12)

    @given(
        st.lists(st.floats(min_value=0, max_value=1), min_size=1, max_size=15),
        st.lists(st.floats(min_value=0, max_value=1), min_size=1, max_size=15),
    )
    def test_in_unit_interval(self, a, b):
        assert 0.0 <= ks_statistic(sorted(a), sorted(b)) <= 1.0


class TestHistogramDivergence:
    def test_identical_distributions_score_zero(self):
        ctx = PenaltyContext(tags=["t"], targets=[0.5],
                             train_samples=[(0.2, 0.8)])
        pool = [hyp([0.2]), hyp([0.8])]
        assert histogram_divergence(ctx, pool) == 0.0

    def test_all_tags_without_samples_trust_decoder(self):
        ctx = PenaltyContext(tags=["t"], targets=[0.5], train_samples=[None])
        assert histogram_divergence(ctx, [hyp([0.3])]) == 1.0

    def test_mean_over_tags(self):
        ctx = PenaltyContext(
            tags=["t", "u"], targets=[0.5, 0.5],
            train_samples=[(0.0,), (0.2, 0.8)])
        pool = [hyp([1.0, 0.2]), hyp([1.0, 0.8])]
        expected = (ks_statistic([0.0], [1.0, 1.0]) + 0.0) / 2
        assert histogram_divergence(ctx, pool) == pytest.approx(expected)


# ---------------------------------------------------------------------------
# Full decoding


WORDS = ("red", "green", "blue", "amber", "stop")


def random_world(rng, n_words=4, dim=3, drop_embedding=0.2):
    """Random model + embedding table + stats store sharing a vocabulary."""
    words = list(WORDS[:n_words])
    model = random_toy_model(rng, words, order=rng.choice([1, 2]))
    vectors = {}
    for w in words + ["tagword"]:
        if rng.random() < drop_embedding:
            continue
        vectors[w] = np.array([rng.uniform(-1, 1) for _ in range(dim)])
    table = EmbeddingTable(dim=dim, vectors=vectors)
    per_tag = {}
    for w in words:
        if rng.random() < 0.5:
            continue
        samples = sorted(round(rng.uniform(0, 1), 3) for _ in range(rng.randint(1, 5)))
        per_tag[w] = TagStats(tag=w, mmcs=median(samples), samples=tuple(samples),
                              support=len(samples))
    if not per_tag:
        samples = (0.4, 0.6)
        per_tag[words[0]] = TagStats(tag=words[0], mmcs=0.5, samples=samples, support=2)
    store = make_store(dim, per_tag)
    tags = rng.sample(words + ["tagword"], k=rng.randint(0, 3))
    return model, table, store, tags


class TestDecodeBasics:
    def test_beam_one_standard_is_greedy(self):
        rng = random.Random(2)
        model = random_toy_model(rng, ["a", "b", "c"], order=2)
        cfg = DecodingConfig(method="standard", beam_width=1, max_len=5)
        got = decode(model, cfg, [])
        prefix = []
        while True:
            logprobs = model.next_logprobs(prefix)
            best = min(model.vocab.candidate_ids,
                       key=lambda tid: (-logprobs[tid], tid))
            prefix.append(best)
            if best == model.vocab.eos_id or len(prefix) == 5:
                break
        assert list(got.tokens) == prefix

    def test_empty_vocab_rejected(self):
        from dmmcs.lm import NGramModel, Vocab

        model = NGramModel(Vocab(()), 1, 1.0, {})
        with pytest.raises(DecodeError):
            decode(model, DecodingConfig(), [])

    def test_missing_stats_rejected(self):
        rng = random.Random(3)
        model = random_toy_model(rng, ["a", "b"], order=1)
        cfg = DecodingConfig(method="dmmcs", alpha=0.5)
        with pytest.raises(DecodeError):
            decode(model, cfg, ["a"])

    def test_deterministic(self):
        rng = random.Random(4)
        model, table, store, tags = random_world(rng)
        cfg = DecodingConfig(method="dmmcs", beam_width=3, max_len=5, alpha=0.5)
        first = decode(model, cfg, tags, store, table)
        second = decode(model, cfg, tags, store, table)
        assert first == second

    def test_finished_iff_eos_or_max_len(self):
        rng = random.Random(5)
        model, table, store, tags = random_world(rng)
        cfg = DecodingConfig(method="standard", beam_width=2, max_len=3)
        got = decode(model, cfg, [])
        assert got.finished
        assert got.tokens[-1] == model.vocab.eos_id or len(got.tokens) == 3


class TestAlphaZeroEquivalence:
    def test_matches_standard_token_for_token(self):
        rng = random.Random(7)
        for trial in range(15):
            model, table, store, tags = random_world(rng)
            for beam in (1, 2, 4, 8):
                base = DecodingConfig(method="standard", beam_width=beam, max_len=5)
                guided = DecodingConfig(method="dmmcs", beam_width=beam,
                                        max_len=5, alpha=0.0)
                std = decode(model, base, tags, store, table)
                dm = decode(model, guided, tags, store, table)
                assert std.tokens == dm.tokens, f"trial {trial} beam {beam}"


class TestExhaustiveOracle:
    def run_case(self, rng, method):
        n_words = rng.randint(2, 4)
        max_len = rng.randint(1, 4)
        model, table, store, tags = random_world(rng, n_words=n_words)
        alpha = rng.choice([0.0, 0.3, 0.6, 1.0])
        width = (n_words + 1) ** max_len + 10
        cfg = DecodingConfig(method=method, beam_width=width, max_len=max_len,
                             alpha=alpha)
        got = decode(model, cfg, tags, store, table)
        ctx = build_penalty_context(tags, store, table, model.vocab)
        expected = brute_best_combined(
            model, method, alpha, max_len,
            tag_sims=ctx.sims, targets=ctx.targets,
            train_samples=ctx.train_samples)
        assert got.combined_score == expected

    def test_dmmcs_matches_brute_force_min(self):
        rng = random.Random(31)
        for _ in range(10):
            self.run_case(rng, "dmmcs")

    def test_dmmcs_hd_matches_brute_force_min(self):
        rng = random.Random(32)
        for _ in range(10):
            self.run_case(rng, "dmmcs_hd")

    def test_standard_matches_brute_force_min(self):
        rng = random.Random(33)
        for _ in range(5):
            n_words = rng.randint(2, 4)
            max_len = rng.randint(1, 4)
            model, _, _, _ = random_world(rng, n_words=n_words)
            width = (n_words + 1) ** max_len + 10
            cfg = DecodingConfig(method="standard", beam_width=width, max_len=max_len)
            got = decode(model, cfg, [])
            expected = brute_best_combined(model, "standard", 0.0, max_len, [], [], [])
            assert got.combined_score == expected


class TestRunningMcsCache:
    def test_final_hypothesis_cache_matches_scratch(self):
        rng = random.Random(41)
        for _ in range(20):
            model, table, store, tags = random_world(rng)
            cfg = DecodingConfig(method="dmmcs", beam_width=3, max_len=5,
                                 alpha=rng.random())
            got = decode(model, cfg, tags, store, table)
            ctx = build_penalty_context(tags, store, table, model.vocab)
            expected = brute_seq_mcs(got.tokens, ctx.sims, model.vocab.eos_id)
            for cached, scratch in zip(got.tag_mcs, expected):
                if scratch is None:
                    assert cached == NEG_INF
                else:
                    assert cached == scratch

    def test_cache_equals_mcs_recomputation_on_decoded_tokens(self):
        rng = random.Random(42)
        for _ in range(10):
            model, table, store, tags = random_world(rng, drop_embedding=0.0)
            cfg = DecodingConfig(method="dmmcs", beam_width=4, max_len=5, alpha=0.7)
            got = decode(model, cfg, tags, store, table)
            ctx = build_penalty_context(tags, store, table, model.vocab)
            token_strings = model.vocab.decode(got.tokens)
            for i, tag in enumerate(ctx.tags):
                emb = embed_tag(tag, table, tokenize)
                scratch = mcs(emb, token_strings, table)
                cached = got.tag_mcs[i]
                if scratch is None:
                    assert cached == NEG_INF
                else:
                    assert cached == scratch

    def test_running_mcs_monotone_along_prefixes(self):
        rng = random.Random(43)
        model, table, store, tags = random_world(rng, drop_embedding=0.0)
        ctx = build_penalty_context(tags, store, table, model.vocab)
        if not ctx.tags:
            return
        ids = [rng.choice(range(len(model.vocab.tokens))) for _ in range(6)]
        previous = [None] * len(ctx.tags)
        for L in range(1, len(ids) + 1):
            current = brute_seq_mcs(ids[:L], ctx.sims, model.vocab.eos_id)
            for prev, cur in zip(previous, current):
                if prev is not None:
                    assert cur >= prev
            previous = current


class TestConstrained:
    def _preferring_model(self, preferred: str, words):
        """Heavy counts steering every context toward one token."""
        from dmmcs.lm import NGramModel, Vocab

        vocab = Vocab(tuple(sorted(words)))
        target = vocab.index[preferred]
        contexts = {(): {target: 1000, vocab.eos_id: 1}}
        return NGramModel(vocab, 1, 0.01, contexts)

    def test_all_forces_required_token(self):
        model = self._preferring_model("b", ["a", "b"])
        cfg = DecodingConfig(method="constrained_all", beam_width=2, max_len=4)
        got = decode(model, cfg, ["a"])
        assert got.constraints_satisfied
        assert model.vocab.index["a"] in got.tokens

    def test_any_forces_one_of(self):
        model = self._preferring_model("c", ["a", "b", "c"])
        cfg = DecodingConfig(method="constrained_any", beam_width=2, max_len=4)
        got = decode(model, cfg, ["a", "b"])
        assert got.constraints_satisfied
        tokens = set(got.tokens)
        assert model.vocab.index["a"] in tokens or model.vocab.index["b"] in tokens

    def test_infeasible_flagged_not_raised(self):
        model = self._preferring_model("a", ["a", "b"])
        cfg = DecodingConfig(method="constrained_all", beam_width=2, max_len=1)
        got = decode(model, cfg, ["a b"])  # 2-token phrase cannot fit
        assert not got.constraints_satisfied
        assert got.finished

    def test_multi_token_phrase_must_be_contiguous(self):
        model = self._preferring_model("c", ["a", "b", "c"])
        cfg = DecodingConfig(method="constrained_all", beam_width=4, max_len=5)
        got = decode(model, cfg, ["a b"])
        assert got.constraints_satisfied
        phrase = (model.vocab.index["a"], model.vocab.index["b"])
        assert contains_phrase(got.tokens, phrase)

    def test_satisfied_flag_truthful_on_random_instances(self):
        rng = random.Random(55)
        for _ in range(30):
            model, _, _, _ = random_world(rng)
            words = list(model.vocab.tokens)
            n_constraints = rng.randint(1, 2)
            tags = [
                " ".join(rng.sample(words, rng.randint(1, 2)))
                for _ in range(n_constraints)
            ]
            method = rng.choice(["constrained_all", "constrained_any"])
            cfg = DecodingConfig(method=method, beam_width=rng.randint(1, 4),
                                 max_len=rng.randint(1, 6))
            got = decode(model, cfg, tags)
            phrases = [
                tuple(model.vocab.index[t] for t in tag.split()) for tag in tags
            ]
            present = [contains_phrase(got.tokens, p) for p in phrases]
            expected = all(present) if method == "constrained_all" else any(present)
            assert got.constraints_satisfied == expected

    def test_eos_blocked_until_satisfied(self):
        # The model strongly prefers immediate EOS, but the constraint
        # must still appear before any satisfied finish.
        from dmmcs.lm import NGramModel, Vocab

        vocab = Vocab(("a", "b"))
        contexts = {(): {vocab.eos_id: 1000, vocab.index["b"]: 10}}
        model = NGramModel(vocab, 1, 0.01, contexts)
        cfg = DecodingConfig(method="constrained_all", beam_width=2, max_len=3)
        got = decode(model, cfg, ["a"])
        assert got.constraints_satisfied
        assert vocab.index["a"] in got.tokens


class TestFallbacks:
    def test_unusable_tags_degrade_to_standard(self):
        rng = random.Random(61)
        model, table, store, _ = random_world(rng, drop_embedding=0.0)
        cfg_d = DecodingConfig(method="dmmcs", beam_width=3, max_len=4, alpha=0.6)
        cfg_s = DecodingConfig(method="standard", beam_width=3, max_len=4)
        got = decode(model, cfg_d, ["completely unknown words"], store, table)
        std = decode(model, cfg_s, [], store, table)
        assert got.tokens == std.tokens

    def test_skip_tag_policy_drops_statless_tags(self):
        rng = random.Random(62)
        model, table, store, _ = random_world(rng, drop_embedding=0.0)
        tagless = [w for w in model.vocab.tokens if w not in store.per_tag]
        if not tagless:
            tagless = ["tagword"]
        ctx = build_penalty_context(
            tagless, store, table, model.vocab, fallback_mmcs_policy="skip_tag")
        assert len(ctx) == 0
