"""Metrics and analyses for generated captions.

Corpus BLEU (add-one smoothed at higher orders), clinical accuracy over
rule-extracted label matrices, per-group aggregation, sentence-order
analysis, alpha-grid tuning, and the tag-expression gap (the quantity the
guided decoder explicitly minimizes).
"""

from __future__ import annotations

import json
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import tokenize
from .embeddings import EmbeddingTable, UncoverableTagError, embed_tag
from .tag_stats import StatsStore, lookup_mmcs, mcs

PRESENT = "present"
NEGATIVE = "negative"
UNSURE = "unsure"
BLANK = "blank"

DEFAULT_ALPHA_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))

_SENTENCE_BOUNDARY = re.compile(r"[.!?]+")


# ---------------------------------------------------------------------------
# BLEU


def _ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def bleu(references, hypotheses, max_n: int = 4) -> float:
    """Corpus-level BLEU in [0, 100], one reference per hypothesis.

    Modified n-gram precision up to ``max_n`` with brevity penalty;
    orders with zero matches are add-one smoothed for n >= 2, zero
    unigram overlap scores 0.  Orders with no n-grams at all (corpus of
    very short captions) are left out of the geometric mean.
    """
    if len(references) != len(hypotheses):
        raise ValueError("references and hypotheses must align")
    if not references:
        raise ValueError("BLEU of an empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for ref, hyp in zip(references, hypotheses):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_counts = _ngram_counts(hyp, n)
            if not hyp_counts:
                continue
            ref_counts = _ngram_counts(ref, n)
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(
                min(count, ref_counts[gram]) for gram, count in hyp_counts.items()
            )
    if hyp_len == 0:
        return 0.0
    log_precisions = []
    for n in range(1, max_n + 1):
        total = totals[n - 1]
        if total == 0:
            continue
        match = matches[n - 1]
        if match == 0:
            if n == 1:
                return 0.0
            precision = 1.0 / (total + 1)
        else:
            precision = match / total
        log_precisions.append(math.log(precision))
    if not log_precisions:
        return 0.0
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(sum(log_precisions) / len(log_precisions))


def sentence_bleu(reference, hypothesis, max_n: int = 4) -> float:
    return bleu([reference], [hypothesis], max_n=max_n)


# ---------------------------------------------------------------------------
# Clinical accuracy


@dataclass(frozen=True)
class LabelMatrix:
    """m caption rows x n class columns, entries present/negative."""

    classes: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        for row in self.rows:
            if len(row) != len(self.classes):
                raise ValueError("label row width must match the class count")
            if any(v not in (PRESENT, NEGATIVE) for v in row):
                raise ValueError("label entries must be present/negative")


def clinical_accuracy(y_ref: LabelMatrix, y_pred: LabelMatrix) -> float:
    """Mean agreement between two label matrices of identical shape."""
    if y_ref.classes != y_pred.classes or len(y_ref.rows) != len(y_pred.rows):
        raise ValueError("label matrices must have identical shape")
    if not y_ref.rows:
        raise ValueError("clinical accuracy of zero caption pairs")
    agree = 0
    cells = 0
    for ref_row, pred_row in zip(y_ref.rows, y_pred.rows):
        for a, b in zip(ref_row, pred_row):
            agree += a == b
            cells += 1
    return agree / cells


def row_accuracy(ref_row, pred_row) -> float:
    """Agreement of one caption pair across classes."""
    if len(ref_row) != len(pred_row) or not ref_row:
        raise ValueError("label rows must align")
    return sum(a == b for a, b in zip(ref_row, pred_row)) / len(ref_row)


@dataclass(frozen=True)
class LabelRule:
    cls: str
    positive_keywords: tuple[str, ...] = ()
    negation_cues: tuple[str, ...] = ()
    unsure_keywords: tuple[str, ...] = ()


def load_rules(path: str | Path) -> list[LabelRule]:
    """Rule file: JSON array of {class, positive_keywords, negation_cues, unsure_keywords}."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    rules = []
    for row in payload:
        rules.append(LabelRule(
            cls=row["class"],
            positive_keywords=tuple(row.get("positive_keywords", ())),
            negation_cues=tuple(row.get("negation_cues", ())),
            unsure_keywords=tuple(row.get("unsure_keywords", ())),
        ))
    return rules


def save_rules(rules, path: str | Path) -> None:
    payload = [
        {
            "class": r.cls,
            "positive_keywords": list(r.positive_keywords),
            "negation_cues": list(r.negation_cues),
            "unsure_keywords": list(r.unsure_keywords),
        }
        for r in rules
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def _contains_phrase(tokens, phrase_tokens) -> bool:
    k = len(phrase_tokens)
    if k == 0 or k > len(tokens):
        return False
    return any(tuple(tokens[i: i + k]) == tuple(phrase_tokens) for i in range(len(tokens) - k + 1))


def _any_keyword(tokens, keywords, tokenizer) -> bool:
    return any(_contains_phrase(tokens, tokenizer(kw)) for kw in keywords)


def labelize(caption_tokens, rules, seed: int, tokenizer=tokenize) -> tuple[str, ...]:
    """One label row from keyword rules, post-processed to present/negative.

    Raw outcomes per class: unsure keyword -> unsure; positive keyword
    with a negation cue in the caption -> negative, without -> present;
    nothing matched -> blank.  Blank maps to negative; unsure resolves to
    present or negative with equal probability under a seeded generator,
    so the result is a pure function of (caption, rules, seed).
    """
    rng = random.Random(seed)
    row = []
    for rule in rules:
        if _any_keyword(caption_tokens, rule.unsure_keywords, tokenizer):
            raw = UNSURE
        elif _any_keyword(caption_tokens, rule.positive_keywords, tokenizer):
            negated = _any_keyword(caption_tokens, rule.negation_cues, tokenizer)
            raw = NEGATIVE if negated else PRESENT
        else:
            raw = BLANK
        if raw == BLANK:
            raw = NEGATIVE
        elif raw == UNSURE:
            raw = PRESENT if rng.random() < 0.5 else NEGATIVE
        row.append(raw)
    return tuple(row)


def label_matrix(captions, rules, seed: int, tokenizer=tokenize) -> LabelMatrix:
    """Label every caption; row i is seeded by (seed + i)."""
    rows = tuple(
        labelize(tokenizer(caption), rules, seed + i, tokenizer)
        for i, caption in enumerate(captions)
    )
    return LabelMatrix(classes=tuple(r.cls for r in rules), rows=rows)


# ---------------------------------------------------------------------------
# Sentence order


def split_sentences(text: str) -> list[str]:
    parts = [p.strip() for p in _SENTENCE_BOUNDARY.split(text)]
    return [p for p in parts if p]


def sentence_order_analysis(gold: str, generated: str, metric=None):
    """Positional metric values for an aligned sentence pair, or None.

    Pairs whose sentence counts differ are skipped (None), mirroring the
    restriction to same-length report pairs.
    """
    metric = metric or (lambda ref, hyp: sentence_bleu(ref, hyp))
    gold_sents = split_sentences(gold)
    gen_sents = split_sentences(generated)
    if len(gold_sents) != len(gen_sents) or not gold_sents:
        return None
    return [
        metric(tokenize(g), tokenize(h)) for g, h in zip(gold_sents, gen_sents)
    ]


# ---------------------------------------------------------------------------
# Reports and grouping


def mean_std(values) -> dict:
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return {"mean": mean, "std": math.sqrt(var)}


@dataclass
class EvalReport:
    per_example: dict[str, dict[str, float]] = field(default_factory=dict)
    aggregate: dict[str, dict] = field(default_factory=dict)
    groups: dict[str, dict[str, dict]] | None = None
    corpus: dict[str, float] = field(default_factory=dict)
    subsets: dict | None = None

    def finalize(self) -> "EvalReport":
        metrics = sorted({m for row in self.per_example.values() for m in row})
        for metric in metrics:
            values = [row[metric] for row in self.per_example.values() if metric in row]
            self.aggregate[metric] = mean_std(values)
        return self

    def to_json(self) -> dict:
        payload = {
            "per_example": self.per_example,
            "aggregate": self.aggregate,
            "corpus": self.corpus,
        }
        if self.groups is not None:
            payload["groups"] = self.groups
        if self.subsets is not None:
            payload["subsets"] = self.subsets
        return payload


def group_eval(per_example: dict[str, dict[str, float]], group_of: dict[str, str | None]):
    """Aggregate per-example metric values by group key.

    Examples without a group land in "ungrouped".
    """
    buckets: dict[str, list[str]] = {}
    for ex_id in per_example:
        group = group_of.get(ex_id) or "ungrouped"
        buckets.setdefault(group, []).append(ex_id)
    out: dict[str, dict[str, dict]] = {}
    for group, ids in sorted(buckets.items()):
        metrics = sorted({m for i in ids for m in per_example[i]})
        out[group] = {
            m: {**mean_std([per_example[i][m] for i in ids if m in per_example[i]]),
                "count": sum(m in per_example[i] for i in ids)}
            for m in metrics
        }
    return out


def subset_split(ids, count: int, seed: int) -> list[list[str]]:
    """Random non-intersecting equally sized subsets (remainder dropped)."""
    if count < 1:
        raise ValueError("subset count must be >= 1")
    size = len(ids) // count
    if size == 0:
        raise ValueError(f"cannot form {count} non-empty subsets from {len(ids)} examples")
    shuffled = list(ids)
    random.Random(seed).shuffle(shuffled)
    return [shuffled[i * size: (i + 1) * size] for i in range(count)]


# ---------------------------------------------------------------------------
# Alpha tuning and the tag-expression gap


def tune_alpha(score_fn, grid=None, maximize: bool = True):
    """Evaluate a score over an alpha grid and pick the best value.

    Ties resolve to the smaller alpha.  Returns (best_alpha, curve) with
    the curve as [(alpha, score), ...] in grid order.
    """
    grid = sorted(grid) if grid else list(DEFAULT_ALPHA_GRID)
    if not grid:
        raise ValueError("empty alpha grid")
    curve = [(alpha, score_fn(alpha)) for alpha in grid]
    best_alpha, best_score = curve[0]
    for alpha, score in curve[1:]:
        better = score > best_score if maximize else score < best_score
        if better:
            best_alpha, best_score = alpha, score
    return best_alpha, curve


def tag_expression_gap(items, store: StatsStore, table: EmbeddingTable,
                       fallback_mmcs_policy: str = "median_of_medians",
                       tokenizer=tokenize):
    """Mean squared distance between expressed and target tag strengths.

    ``items`` is an iterable of (tags, caption_tokens) pairs; each yields
    the mean over its usable tags of (MCS - target)^2, with undefined MCS
    taken as 0.  Returns (mean, per_example_values).
    """
    per_example = []
    for tags, tokens in items:
        gaps = []
        for tag in tags:
            try:
                tag_emb = embed_tag(tag, table, tokenizer)
            except UncoverableTagError:
                continue
            stats = store.per_tag.get(tag)
            if stats is None and fallback_mmcs_policy == "skip_tag":
                continue
            target = stats.mmcs if stats is not None else lookup_mmcs(store, tag)
            value = mcs(tag_emb, tokens, table)
            expressed = 0.0 if value is None else value
            gaps.append((expressed - target) ** 2)
        per_example.append(sum(gaps) / len(gaps) if gaps else 0.0)
    if not per_example:
        raise ValueError("tag expression gap of zero examples")
    return sum(per_example) / len(per_example), per_example


def default_rules(num_classes: int = 14) -> list[LabelRule]:
    """Demo rule set matching the synthetic corpus vocabulary.

    Class i fires on the synthetic condition token and its expression
    variants; real datasets should supply their own rule file.
    """
    rules = []
    for i in range(num_classes):
        rules.append(LabelRule(
            cls=f"cond{i}",
            positive_keywords=(f"cond{i}", f"sign{i}a", f"sign{i}b", f"sign{i}c"),
            negation_cues=("no", "without"),
            unsure_keywords=("possible", "possibly"),
        ))
    return rules
