"""Beam-search engine with four methods behind one configuration surface.

Methods: plain beam search; tag-guided scoring that penalizes candidates
whose per-tag expression strength strays from the learned target medians;
the same with a dynamic histogram-divergence weight; and lexically
constrained search requiring all (or at least one) tag phrase verbatim.

Scoring conventions, fixed here and relied on by the tests:

* The decoder score of a hypothesis is its raw negative log-likelihood,
  accumulated step by step, never length-normalized.
* Per step, raw NLLs of the pre-pruning candidate pool are min-max scaled
  to a "goodness" in [0, 1] (most probable candidate = 1, all-equal
  pools = 1), and the combined objective, to be minimized, is
  ``alpha * penalty + (1 - alpha) * (1 - goodness)``.
* Ties break on lower raw NLL, then lexicographically smaller token ids.
"""

from __future__ import annotations

import logging
from bisect import bisect_right
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import tokenize
from .embeddings import EmbeddingTable, TagEmbedding, UncoverableTagError, cosine, embed_tag
from .lm import Vocab
from .tag_stats import StatsError, StatsStore, lookup_mmcs

logger = logging.getLogger(__name__)

NEG_INF = float("-inf")

METHODS = ("standard", "dmmcs", "dmmcs_hd", "constrained_all", "constrained_any")
FALLBACK_POLICIES = ("median_of_medians", "skip_tag")
TIE_BREAK = "nll_then_tokens"


class DecodeError(ValueError):
    """Decoding cannot proceed with the given inputs."""


@dataclass(frozen=True)
class DecodingConfig:
    method: str = "standard"
    beam_width: int = 4
    max_len: int = 20
    alpha: float = 0.0
    tie_break: str = TIE_BREAK
    fallback_mmcs_policy: str = "median_of_medians"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.tie_break != TIE_BREAK:
            raise ValueError(f"unsupported tie_break {self.tie_break!r}")
        if self.fallback_mmcs_policy not in FALLBACK_POLICIES:
            raise ValueError(
                f"fallback_mmcs_policy must be one of {FALLBACK_POLICIES}"
            )

    @property
    def uses_penalty(self) -> bool:
        return self.method in ("dmmcs", "dmmcs_hd")

    @property
    def constrained(self) -> bool:
        return self.method in ("constrained_all", "constrained_any")


@dataclass(frozen=True, slots=True)
class Hypothesis:
    """A (possibly unfinished) candidate inside beam search.

    ``tag_mcs`` caches, per context tag, the running maximum similarity
    over the covered tokens generated so far (-inf until the first
    covered token appears).  ``satisfied`` tracks which constraint
    phrases already occur as contiguous subsequences.
    """

    tokens: tuple[int, ...]
    raw_nll: float
    finished: bool
    combined_score: float = 0.0
    tag_mcs: tuple[float, ...] = ()
    satisfied: tuple[bool, ...] = ()
    constraints_satisfied: bool = True

    @property
    def num_satisfied(self) -> int:
        return sum(self.satisfied)


@dataclass
class PenaltyContext:
    """Per-input tag state shared by every scoring call of one decode.

    ``sims[i][tid]`` is the similarity of tag i to vocabulary token tid,
    or None for tokens absent from the embedding table (they contribute
    no candidate to the running maximum).
    """

    tags: list[str] = field(default_factory=list)
    tag_embeddings: list[TagEmbedding] = field(default_factory=list)
    targets: list[float] = field(default_factory=list)
    train_samples: list[tuple[float, ...] | None] = field(default_factory=list)
    sims: list[list[float | None]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tags)


def build_penalty_context(
    tags, store: StatsStore, table: EmbeddingTable, vocab: Vocab,
    fallback_mmcs_policy: str = "median_of_medians", tokenizer=tokenize,
) -> PenaltyContext:
    """Embed the input tags, resolve their targets, precompute similarities.

    Tags whose tokens are all out of the embedding vocabulary are dropped
    with a warning; tags without training statistics follow the fallback
    policy (store-median target, or skipped entirely).
    """
    ctx = PenaltyContext()
    for tag in tags:
        try:
            tag_emb = embed_tag(tag, table, tokenizer)
        except UncoverableTagError:
            logger.warning("tag %r not coverable by the embedding table; skipped", tag)
            continue
        stats = store.per_tag.get(tag)
        if stats is None and fallback_mmcs_policy == "skip_tag":
            logger.warning("tag %r has no training statistics; skipped", tag)
            continue
        target = stats.mmcs if stats is not None else lookup_mmcs(store, tag)
        sims: list[float | None] = []
        for token in vocab.tokens:
            vec = table.get(token)
            sims.append(None if vec is None else cosine(tag_emb.vector, vec))
        ctx.tags.append(tag)
        ctx.tag_embeddings.append(tag_emb)
        ctx.targets.append(target)
        ctx.train_samples.append(stats.samples if stats is not None else None)
        ctx.sims.append(sims)
    return ctx


def effective_mcs(value: float) -> float:
    """Prefixes with no covered token count as strength 0."""
    return 0.0 if value == NEG_INF else value


def dmmcs_penalty(ctx: PenaltyContext, hyp: Hypothesis) -> float:
    """Mean squared distance of each tag's running strength from its target."""
    if len(ctx) == 0:
        return 0.0
    total = 0.0
    for value, target in zip(hyp.tag_mcs, ctx.targets):
        gap = effective_mcs(value) - target
        total += gap * gap
    return total / len(ctx)


def normalize_pool(raw_nlls) -> list[float]:
    """Min-max goodness over a candidate pool: best NLL -> 1, worst -> 0.

    Degenerate pools (all NLLs equal) map everyone to 1.
    """
    max_nll = max(raw_nlls)
    min_nll = min(raw_nlls)
    if max_nll == min_nll:
        return [1.0] * len(raw_nlls)
    span = max_nll - min_nll
    return [(max_nll - nll) / span for nll in raw_nlls]


def combine_scores(alpha: float, penalty: float, norm_goodness: float) -> float:
    return alpha * penalty + (1.0 - alpha) * (1.0 - norm_goodness)


def combine_scores_hd(alpha: float, hd: float, penalty: float, norm_goodness: float) -> float:
    return alpha * (1.0 - hd) * penalty + (1.0 - alpha) * hd * (1.0 - norm_goodness)


def ks_statistic(a, b) -> float:
    """Two-sample KS statistic between ascending samples a and b.

    Maximum absolute ECDF gap, evaluated over the union of sample points.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("KS statistic of an empty sample")
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    points = np.concatenate([a_arr, b_arr])
    ecdf_a = np.searchsorted(a_arr, points, side="right") / len(a_arr)
    ecdf_b = np.searchsorted(b_arr, points, side="right") / len(b_arr)
    return float(np.max(np.abs(ecdf_a - ecdf_b)))


def histogram_divergence(ctx: PenaltyContext, pool) -> float:
    """Mean per-tag KS statistic between training and pool MCS samples.

    Tags without a retained training sample are excluded; if every tag is
    excluded the divergence is 1 (trust the decoder fully).
    """
    if not pool:
        raise ValueError("histogram divergence of an empty pool")
    values = []
    for i, samples in enumerate(ctx.train_samples):
        if samples is None:
            continue
        beam_sample = sorted(effective_mcs(h.tag_mcs[i]) for h in pool)
        values.append(ks_statistic(samples, beam_sample))
    if not values:
        return 1.0
    return sum(values) / len(values)


def _tokenize_constraints(tags, vocab: Vocab, tokenizer):
    """Tag surface forms as contiguous id phrases; None when unreachable."""
    phrases = []
    for tag in tags:
        tokens = tokenizer(tag)
        if not tokens or any(t not in vocab.index for t in tokens):
            logger.warning("constraint %r contains tokens outside the model vocabulary", tag)
            phrases.append(None)
        else:
            phrases.append(tuple(vocab.index[t] for t in tokens))
    return phrases


def _phrase_done(tokens: tuple[int, ...], phrase: tuple[int, ...]) -> bool:
    return len(tokens) >= len(phrase) and tokens[-len(phrase):] == phrase


def _constraints_met(method: str, satisfied: tuple[bool, ...]) -> bool:
    if not satisfied:
        return True
    if method == "constrained_all":
        return all(satisfied)
    return any(satisfied)


def _rank_key(hyp: Hypothesis):
    return (hyp.raw_nll, hyp.tokens)


def _score_pool(cfg: DecodingConfig, ctx: PenaltyContext, candidates) -> list[Hypothesis]:
    """Attach the method score to every candidate of the pre-pruning pool."""
    if cfg.uses_penalty:
        goodness = normalize_pool([h.raw_nll for h in candidates])
        penalties = [dmmcs_penalty(ctx, h) for h in candidates]
        if cfg.method == "dmmcs_hd":
            hd = histogram_divergence(ctx, candidates)
            scores = [
                combine_scores_hd(cfg.alpha, hd, p, g)
                for p, g in zip(penalties, goodness)
            ]
        else:
            scores = [
                combine_scores(cfg.alpha, p, g) for p, g in zip(penalties, goodness)
            ]
    else:
        scores = [h.raw_nll for h in candidates]
    return [
        replace(h, combined_score=s) for h, s in zip(candidates, scores)
    ]


def _prune(cfg: DecodingConfig, scored: list[Hypothesis]) -> list[Hypothesis]:
    keyfn = lambda h: (h.combined_score, h.raw_nll, h.tokens)
    if not cfg.constrained:
        return sorted(scored, key=keyfn)[: cfg.beam_width]

    # Constraint-progress banks: group by satisfied-constraint count and
    # hand one slot to every populated bank (highest progress first) so
    # constraint-advancing candidates are never starved, then fill the
    # remaining slots with the globally best leftovers.
    banks: dict[int, list[Hypothesis]] = {}
    for hyp in scored:
        count = hyp.num_satisfied if cfg.method == "constrained_all" else int(any(hyp.satisfied))
        banks.setdefault(count, []).append(hyp)
    for bank in banks.values():
        bank.sort(key=keyfn)
    selected = []
    leftovers = []
    for count in sorted(banks, reverse=True):
        bank = banks[count]
        if len(selected) < cfg.beam_width:
            selected.append(bank[0])
            leftovers.extend(bank[1:])
        else:
            leftovers.extend(bank)
    leftovers.sort(key=keyfn)
    selected.extend(leftovers[: cfg.beam_width - len(selected)])
    return sorted(selected, key=keyfn)


def decode(model, cfg: DecodingConfig, tags,
           store: StatsStore | None = None, table: EmbeddingTable | None = None,
           tokenizer=tokenize) -> Hypothesis:
    """Run one beam search and return the best finished hypothesis.

    For the penalty methods, ``store`` and ``table`` must be loaded; when
    none of the input tags is usable the search degrades to the standard
    ranking with a warning.  Constrained methods use the tags as phrase
    constraints; when they cannot be satisfied within ``max_len`` the
    best effort comes back flagged ``constraints_satisfied=False``.
    """
    vocab: Vocab = model.vocab
    if len(vocab.tokens) == 0:
        raise DecodeError("empty vocabulary")

    ctx = PenaltyContext()
    if cfg.uses_penalty:
        if store is None or table is None:
            raise DecodeError(f"method {cfg.method} requires statistics and embeddings")
        if len(store) == 0:
            raise StatsError("no statistics available")
        ctx = build_penalty_context(
            tags, store, table, vocab, cfg.fallback_mmcs_policy, tokenizer
        )
        if tags and len(ctx) == 0:
            logger.warning("no usable tag; decoding falls back to the standard ranking")

    phrases = _tokenize_constraints(tags, vocab, tokenizer) if cfg.constrained else []

    root = Hypothesis(
        tokens=(),
        raw_nll=0.0,
        finished=False,
        tag_mcs=(NEG_INF,) * len(ctx),
        satisfied=(False,) * len(phrases),
        constraints_satisfied=_constraints_met(cfg.method, (False,) * len(phrases)),
    )
    pool = [root]
    eos = vocab.eos_id

    batch_fn = getattr(model, "next_logprobs_batch", None)
    for _ in range(cfg.max_len):
        if all(h.finished for h in pool):
            break
        unfinished = [h for h in pool if not h.finished]
        if batch_fn is not None:
            vectors = iter(batch_fn([h.tokens for h in unfinished]))
        else:
            vectors = iter(model.next_logprobs(h.tokens) for h in unfinished)
        candidates: list[Hypothesis] = []
        for hyp in pool:
            if hyp.finished:
                candidates.append(hyp)
                continue
            logprobs = next(vectors)
            met_before = _constraints_met(cfg.method, hyp.satisfied)
            for tid in vocab.candidate_ids:
                logprob = logprobs[tid]
                if logprob == NEG_INF:
                    continue
                is_eos = tid == eos
                if is_eos and cfg.constrained and not met_before:
                    continue
                tokens = hyp.tokens + (tid,)
                if is_eos:
                    tag_mcs = hyp.tag_mcs
                    satisfied = hyp.satisfied
                else:
                    if ctx.sims:
                        tag_mcs = tuple(
                            old if sims[tid] is None or sims[tid] <= old else sims[tid]
                            for old, sims in zip(hyp.tag_mcs, ctx.sims)
                        )
                    else:
                        tag_mcs = hyp.tag_mcs
                    if phrases:
                        satisfied = tuple(
                            done or (p is not None and _phrase_done(tokens, p))
                            for done, p in zip(hyp.satisfied, phrases)
                        )
                    else:
                        satisfied = hyp.satisfied
                finished = is_eos or len(tokens) == cfg.max_len
                candidates.append(Hypothesis(
                    tokens=tokens,
                    raw_nll=hyp.raw_nll - float(logprob),
                    finished=finished,
                    tag_mcs=tag_mcs,
                    satisfied=satisfied,
                    constraints_satisfied=_constraints_met(cfg.method, satisfied),
                ))
        if not candidates:
            break
        pool = _prune(cfg, _score_pool(cfg, ctx, candidates))

    finished = [h for h in pool if h.finished]
    if not finished:
        raise DecodeError("no finished hypothesis; the model starved the beam")

    if cfg.uses_penalty:
        best = min(finished, key=lambda h: (h.combined_score, h.raw_nll, h.tokens))
    elif cfg.constrained:
        met = [h for h in finished if h.constraints_satisfied]
        if not met:
            logger.warning("constraints unsatisfiable within max_len; best effort returned")
        best = min(met or finished, key=_rank_key)
    else:
        best = min(finished, key=_rank_key)
    return best
