"""Operator surface: statistics, decoding, tuning, evaluation, utilities.

Every command writes its outputs plus a ``<out>.manifest.json`` recording
the resolved configuration, input digests, seed, and (with ``--timing``)
per-phase wall-clock milliseconds.  Log level comes from the ``DMMCS_LOG``
environment variable.
"""

from __future__ import annotations

import json
import logging
import math
import os
import shlex
import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import evaluation as eval_mod
from . import lm as lm_mod
from . import synth as synth_mod
from . import tag_stats as stats_mod
from .decoding import DecodingConfig, decode
from .embeddings import load_embeddings, save_embeddings
from .manifest import PhaseTimer, build_manifest, write_manifest

logger = logging.getLogger(__name__)

METHOD_NAMES = {
    "standard": "standard",
    "dmmcs": "dmmcs",
    "dmmcs-hd": "dmmcs_hd",
    "constrained-all": "constrained_all",
    "constrained-any": "constrained_any",
}
METRICS = ("bleu", "ca", "gap", "perplexity")
MAXIMIZE = {"bleu": True, "ca": True, "gap": False, "perplexity": False}


def _configure_logging():
    level = os.environ.get("DMMCS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        stream=sys.stderr)


def _dump_json(payload, path: Path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def _dump_jsonl(rows, path: Path):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def _load_jsonl(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise click.ClickException(f"{path}: line {lineno}: invalid JSON ({exc.msg})")
    return rows


def _fail(message: str):
    raise click.ClickException(message)


@click.group()
def main():
    """Tag-guided beam search decoding engine."""
    _configure_logging()


# ---------------------------------------------------------------------------


@main.command("build-stats")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--embeddings", "embeddings_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--timing", is_flag=True)
def cmd_build_stats(corpus_path, embeddings_path, out_path, seed, timing):
    """Compute per-tag similarity statistics from the train split."""
    timer = PhaseTimer()
    with timer.phase("load"):
        corpus = corpus_mod.load_corpus(corpus_path)
        table = load_embeddings(embeddings_path)
    with timer.phase("build"):
        try:
            store = stats_mod.build_stats(corpus, table)
        except stats_mod.StatsError as exc:
            _fail(str(exc))
    with timer.phase("write"):
        stats_mod.save_stats(store, out_path)
    all_tags = {t for ex in corpus.split("train") for t in ex.tags}
    click.echo(f"tags kept: {len(store)} / {len(all_tags)}", err=True)
    manifest = build_manifest(
        "build-stats",
        {"corpus": str(corpus_path), "embeddings": str(embeddings_path),
         "out": str(out_path)},
        [corpus_path, embeddings_path],
        seed=seed,
        timings_ms=timer.timings_ms if timing else None,
    )
    write_manifest(manifest, out_path)


# ---------------------------------------------------------------------------


def _load_model(model, model_cmd, model_vocab):
    """Resolve the model source; returns (model, closer)."""
    if model and (model_cmd or model_vocab):
        _fail("--model and --model-cmd/--model-vocab are mutually exclusive")
    if model:
        return lm_mod.load_ngram(model), lambda: None
    if model_cmd == "-":
        if not model_vocab:
            _fail("--model-cmd - requires --model-vocab")
        vocab = lm_mod.load_vocab(model_vocab)
        pipe = lm_mod.PipeModel(vocab, sys.stdout, sys.stdin)
        return pipe, lambda: None
    if model_cmd:
        if not model_vocab:
            _fail("--model-cmd requires --model-vocab")
        vocab = lm_mod.load_vocab(model_vocab)
        proc = lm_mod.SubprocessModel(vocab, shlex.split(model_cmd))
        return proc, proc.close
    _fail("one of --model or --model-cmd is required")


@main.command("decode")
@click.option("--model", type=click.Path(exists=True), default=None,
              help="Trained n-gram model JSON.")
@click.option("--model-cmd", default=None,
              help="External model command speaking the JSON pipe protocol; "
                   "'-' serves the protocol on this process's stdin/stdout.")
@click.option("--model-vocab", type=click.Path(exists=True), default=None,
              help="Vocabulary JSON for --model-cmd.")
@click.option("--method", type=click.Choice(sorted(METHOD_NAMES)), default="standard")
@click.option("--stats", "stats_path", type=click.Path(exists=True), default=None)
@click.option("--embeddings", "embeddings_path", type=click.Path(exists=True), default=None)
@click.option("--requests", "requests_path", required=True, type=click.Path(exists=True))
@click.option("--alpha", type=float, default=0.0)
@click.option("--beam", type=int, default=4)
@click.option("--max-len", type=int, default=20)
@click.option("--fallback-mmcs", type=click.Choice(["median-of-medians", "skip-tag"]),
              default="median-of-medians")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--timing", is_flag=True)
def cmd_decode(model, model_cmd, model_vocab, method, stats_path, embeddings_path,
               requests_path, alpha, beam, max_len, fallback_mmcs, out_path,
               seed, timing):
    """Decode a batch of tag requests with the selected method."""
    method_key = METHOD_NAMES[method]
    timer = PhaseTimer()
    with timer.phase("load"):
        seq_model, closer = _load_model(model, model_cmd, model_vocab)
        store = table = None
        if method_key in ("dmmcs", "dmmcs_hd"):
            if not stats_path or not embeddings_path:
                _fail(f"method {method} requires --stats and --embeddings")
            store = stats_mod.load_stats(stats_path)
            table = load_embeddings(embeddings_path)
        requests = _load_jsonl(Path(requests_path))
        cfg = DecodingConfig(
            method=method_key, beam_width=beam, max_len=max_len, alpha=alpha,
            fallback_mmcs_policy=fallback_mmcs.replace("-", "_"),
        )
    rows = []
    try:
        with timer.phase("decode"):
            for req in requests:
                hyp = decode(seq_model, cfg, req.get("tags", []), store, table)
                tokens = seq_model.vocab.decode(hyp.tokens)
                rows.append({
                    "id": req["id"],
                    "tokens": tokens,
                    "text": " ".join(tokens),
                    "raw_nll": hyp.raw_nll,
                    "combined_score": hyp.combined_score,
                    "method": method_key,
                    "alpha": alpha,
                    "constraints_satisfied": hyp.constraints_satisfied,
                })
    finally:
        closer()
    with timer.phase("write"):
        _dump_jsonl(rows, Path(out_path))
    unsatisfied = sum(not r["constraints_satisfied"] for r in rows)
    click.echo(f"decoded {len(rows)} requests ({unsatisfied} unsatisfied)", err=True)
    inputs = [p for p in (model, model_vocab, stats_path, embeddings_path, requests_path) if p]
    manifest = build_manifest(
        "decode",
        {"method": method_key, "alpha": alpha, "beam": beam, "max_len": max_len,
         "fallback_mmcs": fallback_mmcs, "requests": str(requests_path),
         "out": str(out_path)},
        inputs,
        seed=seed,
        timings_ms=timer.timings_ms if timing else None,
    )
    write_manifest(manifest, out_path)


# ---------------------------------------------------------------------------


def _decode_corpus(seq_model, cfg, items, store, table):
    """Decode (id, tags) items; returns id -> hypothesis token strings."""
    out = {}
    for ex_id, tags in items:
        hyp = decode(seq_model, cfg, tags, store, table)
        out[ex_id] = seq_model.vocab.decode(hyp.tokens)
    return out


def _metric_over(metric, gold_tokens, hyp_tokens, tag_sets, seq_model, store, table, rules, seed):
    """Corpus-level value of one metric over aligned decoded output."""
    if metric == "bleu":
        return eval_mod.bleu(gold_tokens, hyp_tokens)
    if metric == "ca":
        gold_rows = eval_mod.label_matrix([" ".join(t) for t in gold_tokens], rules, seed)
        hyp_rows = eval_mod.label_matrix([" ".join(t) for t in hyp_tokens], rules, seed)
        return eval_mod.clinical_accuracy(gold_rows, hyp_rows)
    if metric == "gap":
        mean, _ = eval_mod.tag_expression_gap(
            zip(tag_sets, hyp_tokens), store, table)
        return mean
    if metric == "perplexity":
        total_nll = 0.0
        total = 0
        for tokens in hyp_tokens:
            ids = seq_model.vocab.encode(tokens) + [seq_model.vocab.eos_id]
            total_nll += lm_mod.d_score(seq_model, ids)
            total += len(ids)
        return math.exp(total_nll / total)
    _fail(f"unknown metric {metric}")


@main.command("tune-alpha")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--model", required=True, type=click.Path(exists=True))
@click.option("--stats", "stats_path", required=True, type=click.Path(exists=True))
@click.option("--embeddings", "embeddings_path", required=True, type=click.Path(exists=True))
@click.option("--metric", type=click.Choice(METRICS), default="bleu")
@click.option("--grid", default=None, help="Comma-separated alpha values.")
@click.option("--method", type=click.Choice(["dmmcs", "dmmcs-hd"]), default="dmmcs")
@click.option("--beam", type=int, default=4)
@click.option("--max-len", type=int, default=20)
@click.option("--rules", "rules_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@click.option("--timing", is_flag=True)
def cmd_tune_alpha(corpus_path, model, stats_path, embeddings_path, metric, grid,
                   method, beam, max_len, rules_path, out_path, seed, timing):
    """Grid-tune alpha on the validation split."""
    timer = PhaseTimer()
    with timer.phase("load"):
        corpus = corpus_mod.load_corpus(corpus_path)
        val = corpus.split("val")
        if len(val) == 0:
            _fail("corpus has no validation split")
        seq_model = lm_mod.load_ngram(model)
        store = stats_mod.load_stats(stats_path)
        table = load_embeddings(embeddings_path)
        rules = eval_mod.load_rules(rules_path) if rules_path else eval_mod.default_rules()
    grid_values = [float(x) for x in grid.split(",")] if grid else None
    gold_tokens = [corpus_mod.tokenize(ex.caption) for ex in val]
    tag_sets = [list(ex.tags) for ex in val]
    items = [(ex.id, list(ex.tags)) for ex in val]

    def score_fn(alpha: float) -> float:
        cfg = DecodingConfig(method=METHOD_NAMES[method], beam_width=beam,
                             max_len=max_len, alpha=alpha)
        decoded = _decode_corpus(seq_model, cfg, items, store, table)
        hyp_tokens = [decoded[ex.id] for ex in val]
        return _metric_over(metric, gold_tokens, hyp_tokens, tag_sets,
                            seq_model, store, table, rules, seed)

    with timer.phase("tune"):
        best_alpha, curve = eval_mod.tune_alpha(
            score_fn, grid_values, maximize=MAXIMIZE[metric])
    payload = {
        "metric": metric,
        "maximize": MAXIMIZE[metric],
        "grid": [a for a, _ in curve],
        "curve": [{"alpha": a, "score": s} for a, s in curve],
        "best_alpha": best_alpha,
    }
    with timer.phase("write"):
        _dump_json(payload, Path(out_path))
    click.echo(f"best alpha: {best_alpha}", err=True)
    inputs = [corpus_path, model, stats_path, embeddings_path] + (
        [rules_path] if rules_path else [])
    manifest = build_manifest(
        "tune-alpha",
        {"metric": metric, "method": method, "beam": beam, "max_len": max_len,
         "grid": payload["grid"], "out": str(out_path)},
        inputs, seed=seed,
        timings_ms=timer.timings_ms if timing else None,
    )
    write_manifest(manifest, out_path)


# ---------------------------------------------------------------------------


@main.command("evaluate")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True),
              help="Gold corpus providing captions, tags, and groups.")
@click.option("--hyps", "hyps_path", required=True, type=click.Path(exists=True),
              help="Decode output JSON-lines.")
@click.option("--metric", type=click.Choice(METRICS), default="bleu")
@click.option("--groups", is_flag=True, help="Aggregate per corpus group value.")
@click.option("--sentence-order", is_flag=True,
              help="Positional sentence-pair analysis against gold captions.")
@click.option("--subsets", type=int, default=0,
              help="Also report mean/std over N random non-intersecting subsets.")
@click.option("--rules", "rules_path", type=click.Path(exists=True), default=None)
@click.option("--stats", "stats_path", type=click.Path(exists=True), default=None)
@click.option("--embeddings", "embeddings_path", type=click.Path(exists=True), default=None)
@click.option("--model", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@click.option("--timing", is_flag=True)
def cmd_evaluate(corpus_path, hyps_path, metric, groups, sentence_order, subsets,
                 rules_path, stats_path, embeddings_path, model, out_path, seed, timing):
    """Score decoded captions against the gold corpus."""
    timer = PhaseTimer()
    with timer.phase("load"):
        corpus = corpus_mod.load_corpus(corpus_path)
        by_id = {ex.id: ex for ex in corpus}
        hyps = _load_jsonl(Path(hyps_path))
        unknown = [h["id"] for h in hyps if h["id"] not in by_id]
        if unknown:
            _fail(f"hypothesis ids missing from corpus: {unknown[:3]}")
        store = stats_mod.load_stats(stats_path) if stats_path else None
        table = load_embeddings(embeddings_path) if embeddings_path else None
        seq_model = lm_mod.load_ngram(model) if model else None
        rules = eval_mod.load_rules(rules_path) if rules_path else eval_mod.default_rules()
    if metric == "gap" and (store is None or table is None):
        _fail("--metric gap requires --stats and --embeddings")
    if metric == "perplexity" and seq_model is None:
        _fail("--metric perplexity requires --model")

    ids = [h["id"] for h in hyps]
    gold_tokens = [corpus_mod.tokenize(by_id[i].caption) for i in ids]
    hyp_tokens = [list(h["tokens"]) for h in hyps]
    tag_sets = [list(by_id[i].tags) for i in ids]

    report = eval_mod.EvalReport()
    with timer.phase("metrics"):
        if metric == "bleu":
            per = [eval_mod.sentence_bleu(g, h) for g, h in zip(gold_tokens, hyp_tokens)]
            report.corpus["bleu"] = eval_mod.bleu(gold_tokens, hyp_tokens)
        elif metric == "ca":
            gold_m = eval_mod.label_matrix([by_id[i].caption for i in ids], rules, seed)
            hyp_m = eval_mod.label_matrix([h["text"] for h in hyps], rules, seed)
            per = [eval_mod.row_accuracy(a, b) for a, b in zip(gold_m.rows, hyp_m.rows)]
            report.corpus["ca"] = eval_mod.clinical_accuracy(gold_m, hyp_m)
        elif metric == "gap":
            mean, per = eval_mod.tag_expression_gap(zip(tag_sets, hyp_tokens), store, table)
            report.corpus["gap"] = mean
        else:
            per = lm_mod.text_perplexity(seq_model, [h["text"] for h in hyps])
            report.corpus["perplexity"] = _metric_over(
                "perplexity", gold_tokens, hyp_tokens, tag_sets, seq_model,
                store, table, rules, seed)
        for ex_id, value in zip(ids, per):
            report.per_example[ex_id] = {metric: value}
        report.finalize()

        if groups:
            group_of = {i: by_id[i].group for i in ids}
            report.groups = eval_mod.group_eval(report.per_example, group_of)

        if sentence_order:
            scores = []
            skipped = 0
            for i, h in zip(ids, hyps):
                positions = eval_mod.sentence_order_analysis(by_id[i].caption, h["text"])
                if positions is None:
                    skipped += 1
                else:
                    scores.extend(positions)
            report.corpus["sentence_order_pairs_skipped"] = skipped
            if scores:
                report.corpus["sentence_order_mean"] = sum(scores) / len(scores)

        if subsets:
            chunks = eval_mod.subset_split(ids, subsets, seed)
            index = {i: n for n, i in enumerate(ids)}
            values = []
            for chunk in chunks:
                sel = [index[i] for i in chunk]
                values.append(_metric_over(
                    metric,
                    [gold_tokens[s] for s in sel],
                    [hyp_tokens[s] for s in sel],
                    [tag_sets[s] for s in sel],
                    seq_model, store, table, rules, seed))
            summary = eval_mod.mean_std(values)
            report.subsets = {"count": subsets, "seed": seed, "values": values, **summary}

    with timer.phase("write"):
        _dump_json(report.to_json(), Path(out_path))
    click.echo(f"{metric}: {report.aggregate[metric]['mean']:.4f} "
               f"(n={len(report.per_example)})", err=True)
    inputs = [p for p in (corpus_path, hyps_path, rules_path, stats_path,
                          embeddings_path, model) if p]
    manifest = build_manifest(
        "evaluate",
        {"metric": metric, "groups": groups, "sentence_order": sentence_order,
         "subsets": subsets, "out": str(out_path)},
        inputs, seed=seed,
        timings_ms=timer.timings_ms if timing else None,
    )
    write_manifest(manifest, out_path)


# ---------------------------------------------------------------------------


@main.command("split")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_split(corpus_path, seed, out_path):
    """Assign a seeded 75/10/15 train/val/test split."""
    corpus = corpus_mod.load_corpus(corpus_path)
    if len(corpus) == 0:
        _fail("empty corpus")
    split_corpus = corpus_mod.assign_splits(corpus, seed)
    corpus_mod.save_corpus(split_corpus, out_path)
    counts = {name: len(split_corpus.split(name)) for name in corpus_mod.SPLITS}
    click.echo(json.dumps(counts, sort_keys=True), err=True)
    manifest = build_manifest(
        "split", {"out": str(out_path)}, [corpus_path], seed=seed)
    write_manifest(manifest, out_path)


@main.command("train-lm")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--n", type=int, default=3, help="Model order.")
@click.option("--k", type=float, default=1.0, help="Add-k smoothing constant.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
def cmd_train_lm(corpus_path, n, k, out_path, seed):
    """Train the add-k n-gram toy model on the train split."""
    corpus = corpus_mod.load_corpus(corpus_path)
    try:
        model = lm_mod.train_ngram(corpus, n, k)
    except ValueError as exc:
        _fail(str(exc))
    lm_mod.save_ngram(model, out_path)
    click.echo(f"vocab size: {len(model.vocab.tokens)}", err=True)
    manifest = build_manifest(
        "train-lm", {"n": n, "k": k, "out": str(out_path)}, [corpus_path], seed=seed)
    write_manifest(manifest, out_path)


@main.command("stats-report")
@click.option("--stats", "stats_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_stats_report(stats_path, out_path):
    """Per-tag {q1, median, q3} summary rows, sorted by median."""
    store = stats_mod.load_stats(stats_path)
    rows = stats_mod.quartile_report(store)
    _dump_json({"tags": rows, "default_mmcs": store.default_mmcs}, Path(out_path))
    click.echo(f"{len(rows)} tags summarized", err=True)
    manifest = build_manifest("stats-report", {"out": str(out_path)}, [stats_path])
    write_manifest(manifest, out_path)


@main.command("gen-synth")
@click.option("--tags", "num_tags", type=int, default=8)
@click.option("--examples", "train_examples", type=int, default=500,
              help="Training example count.")
@click.option("--val-examples", type=int, default=50)
@click.option("--test-examples", type=int, default=100)
@click.option("--tag-drop", type=float, default=0.0,
              help="Per-tag drop probability for the noisy request file.")
@click.option("--tag-add", type=float, default=0.0,
              help="Per-example spurious-tag probability for the noisy request file.")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_gen_synth(num_tags, train_examples, val_examples, test_examples,
                  tag_drop, tag_add, seed, out_dir):
    """Generate a synthetic corpus with planted tag expression strengths."""
    data = synth_mod.generate_synthetic(
        num_tags=num_tags, train_examples=train_examples,
        val_examples=val_examples, test_examples=test_examples,
        seed=seed, tag_drop=tag_drop, tag_add=tag_add,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus_mod.save_corpus(data.corpus, out / "corpus.jsonl")
    save_embeddings(data.table, out / "embeddings.txt")
    _dump_jsonl(data.requests, out / "requests_test.jsonl")
    if data.noisy_requests is not None:
        _dump_jsonl(data.noisy_requests, out / "requests_test_noisy.jsonl")
    eval_mod.save_rules(eval_mod.default_rules(num_tags), out / "rules.json")
    _dump_json(data.levels, out / "levels.json")
    click.echo(f"wrote synthetic corpus to {out}", err=True)
    manifest = build_manifest(
        "gen-synth",
        {"tags": num_tags, "examples": train_examples,
         "val_examples": val_examples, "test_examples": test_examples,
         "tag_drop": tag_drop, "tag_add": tag_add, "out": str(out)},
        [], seed=seed)
    write_manifest(manifest, out / "corpus.jsonl")


if __name__ == "__main__":
    main()
