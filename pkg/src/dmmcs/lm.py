"""Sequence models: the next-token contract, an add-k n-gram, and scores.

A sequence model exposes a vocabulary and ``next_logprobs(prefix)``; the
returned vector covers the whole vocabulary and exponentiates to a
probability distribution.  The begin marker occupies the last id and is
never generated (log-probability -inf), so external processes only ever
deal with the contiguous id range ``0..eos_id``.
"""

from __future__ import annotations

import json
import logging
import math
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, tokenize

logger = logging.getLogger(__name__)

NEG_INF = float("-inf")


class ModelContractViolation(ValueError):
    """A model returned a vector that is not a log-probability distribution."""


@dataclass(frozen=True)
class Vocab:
    """Dense token-id space: corpus tokens, then EOS, then BOS."""

    tokens: tuple[str, ...]
    index: dict[str, int] = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be distinct")
        object.__setattr__(self, "index", {tok: i for i, tok in enumerate(self.tokens)})

    @property
    def eos_id(self) -> int:
        return len(self.tokens)

    @property
    def bos_id(self) -> int:
        return len(self.tokens) + 1

    @property
    def size(self) -> int:
        return len(self.tokens) + 2

    @property
    def candidate_ids(self) -> range:
        """Ids the decoder may generate: every token plus EOS."""
        return range(len(self.tokens) + 1)

    def encode(self, tokens) -> list[int]:
        """Token strings to ids; out-of-vocabulary tokens are dropped."""
        return [self.index[t] for t in tokens if t in self.index]

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids if i < len(self.tokens)]


def validate_logprobs(vec: np.ndarray, size: int, tol: float = 1e-9) -> None:
    """Reject vectors that are not a log-probability distribution."""
    if vec.shape != (size,):
        raise ModelContractViolation(f"expected vector of length {size}, got {vec.shape}")
    if np.any(np.isnan(vec)) or np.any(vec == np.inf):
        raise ModelContractViolation("log-probabilities must be finite or -inf")
    total = float(np.exp(vec).sum())
    if abs(total - 1.0) > tol:
        raise ModelContractViolation(f"probabilities sum to {total}, not 1")


class NGramModel:
    """Add-k smoothed n-gram model over BOS-padded, EOS-terminated captions.

    Smoothing guarantees every candidate token (vocabulary plus EOS) has
    nonzero probability in every context, which full-expansion beam search
    and the exhaustive test oracle rely on.
    """

    def __init__(self, vocab: Vocab, order: int, k: float,
                 contexts: dict[tuple[int, ...], dict[int, int]]):
        if order < 1:
            raise ValueError("order must be >= 1")
        if k <= 0:
            raise ValueError("smoothing constant must be > 0")
        self.vocab = vocab
        self.order = order
        self.k = k
        self.contexts = contexts
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def _context_of(self, prefix) -> tuple[int, ...]:
        if self.order == 1:
            return ()
        padded = [self.vocab.bos_id] * (self.order - 1) + list(prefix)
        return tuple(padded[-(self.order - 1):])

    def next_logprobs(self, prefix) -> np.ndarray:
        context = self._context_of(prefix)
        cached = self._cache.get(context)
        if cached is not None:
            return cached
        n_candidates = len(self.vocab.tokens) + 1
        counts = np.zeros(n_candidates, dtype=np.float64)
        for token_id, count in self.contexts.get(context, {}).items():
            counts[token_id] = count
        total = counts.sum()
        probs = (counts + self.k) / (total + self.k * n_candidates)
        vec = np.empty(self.vocab.size, dtype=np.float64)
        vec[:n_candidates] = np.log(probs)
        vec[self.vocab.bos_id] = NEG_INF
        vec.setflags(write=False)
        self._cache[context] = vec
        return vec

    def to_json(self) -> dict:
        return {
            "order": self.order,
            "k": self.k,
            "vocab": list(self.vocab.tokens),
            "contexts": {
                " ".join(str(i) for i in ctx): {str(t): c for t, c in counts.items()}
                for ctx, counts in self.contexts.items()
            },
        }

    @classmethod
    def from_json(cls, payload: dict) -> "NGramModel":
        vocab = Vocab(tuple(payload["vocab"]))
        contexts = {}
        for ctx_key, counts in payload["contexts"].items():
            ctx = tuple(int(i) for i in ctx_key.split()) if ctx_key else ()
            contexts[ctx] = {int(t): int(c) for t, c in counts.items()}
        return cls(vocab, int(payload["order"]), float(payload["k"]), contexts)


def train_ngram(corpus: Corpus, n: int, k: float, tokenizer=tokenize) -> NGramModel:
    """Count n-grams over the train split and wrap them in an add-k model."""
    train = corpus.split("train")
    if len(train) == 0:
        raise ValueError("empty train split")
    token_set = set()
    captions = []
    for ex in train:
        tokens = tokenizer(ex.caption)
        token_set.update(tokens)
        captions.append(tokens)
    vocab = Vocab(tuple(sorted(token_set)))

    contexts: dict[tuple[int, ...], dict[int, int]] = {}
    for tokens in captions:
        seq = [vocab.bos_id] * (n - 1) + vocab.encode(tokens) + [vocab.eos_id]
        for i in range(n - 1, len(seq)):
            ctx = tuple(seq[i - n + 1: i])
            counts = contexts.setdefault(ctx, {})
            counts[seq[i]] = counts.get(seq[i], 0) + 1
    return NGramModel(vocab, n, k, contexts)


def save_ngram(model: NGramModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh, ensure_ascii=False, sort_keys=True)
        fh.write("\n")


def load_ngram(path: str | Path) -> NGramModel:
    with open(path, encoding="utf-8") as fh:
        return NGramModel.from_json(json.load(fh))


def d_score(model, seq) -> float:
    """Negative sum of per-step log-probabilities over the whole sequence.

    ``seq`` is a generated id sequence, including the EOS id if the
    sequence terminated on it.
    """
    nll = 0.0
    for t, token_id in enumerate(seq):
        logprob = float(model.next_logprobs(list(seq[:t]))[token_id])
        nll -= logprob
    return nll


def perplexity(model, corpus: Corpus, tokenizer=tokenize) -> float:
    """exp(total NLL / total token count) over EOS-terminated captions.

    Out-of-vocabulary caption tokens are dropped before scoring (the toy
    models assign them no probability mass); the EOS step is counted.
    """
    total_nll = 0.0
    total_tokens = 0
    dropped = 0
    for ex in corpus:
        tokens = tokenizer(ex.caption)
        ids = model.vocab.encode(tokens)
        dropped += len(tokens) - len(ids)
        seq = ids + [model.vocab.eos_id]
        total_nll += d_score(model, seq)
        total_tokens += len(seq)
    if total_tokens == 0:
        raise ValueError("perplexity of an empty corpus")
    if dropped:
        logger.info("perplexity: dropped %d out-of-vocabulary tokens", dropped)
    return math.exp(total_nll / total_tokens)


def text_perplexity(model, texts, tokenizer=tokenize) -> list[float]:
    """Per-text perplexity values under the model (same dropping rule)."""
    values = []
    for text in texts:
        ids = model.vocab.encode(tokenizer(text))
        seq = ids + [model.vocab.eos_id]
        values.append(math.exp(d_score(model, seq) / len(seq)))
    return values


class PipeModel:
    """Sequence model served over a line-delimited JSON pipe.

    One request per decoding query: ``{"prefix": [ids...]}`` out,
    ``{"logprobs": [floats...]}`` back, newline-terminated.  The reply
    vector covers ids ``0..eos_id`` (every vocabulary token plus EOS);
    the engine re-validates every vector and rejects contract violations.
    """

    def __init__(self, vocab: Vocab, send, recv):
        self.vocab = vocab
        self._send = send
        self._recv = recv

    def _read_reply(self) -> np.ndarray:
        line = self._recv.readline()
        if not line:
            raise ModelContractViolation("model pipe closed before replying")
        reply = json.loads(line)
        ext = np.asarray(reply["logprobs"], dtype=np.float64)
        n_candidates = len(self.vocab.tokens) + 1
        if ext.shape != (n_candidates,):
            raise ModelContractViolation(
                f"expected {n_candidates} log-probabilities, got {ext.shape}"
            )
        vec = np.empty(self.vocab.size, dtype=np.float64)
        vec[:n_candidates] = ext
        vec[self.vocab.bos_id] = NEG_INF
        validate_logprobs(vec, self.vocab.size)
        return vec

    def next_logprobs(self, prefix) -> np.ndarray:
        self._send.write(json.dumps({"prefix": list(prefix)}) + "\n")
        self._send.flush()
        return self._read_reply()

    def next_logprobs_batch(self, prefixes) -> list[np.ndarray]:
        """Pipelined queries: all requests written under one flush.

        Keeps foreign-call crossings at one per decoding step over the
        whole pool instead of one per hypothesis; the server stays a
        plain read-line/write-line loop.
        """
        for prefix in prefixes:
            self._send.write(json.dumps({"prefix": list(prefix)}) + "\n")
        self._send.flush()
        return [self._read_reply() for _ in prefixes]


class SubprocessModel(PipeModel):
    """Pipe model whose server is a child process spawned from a command."""

    def __init__(self, vocab: Vocab, argv: list[str]):
        self._proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True
        )
        super().__init__(vocab, self._proc.stdin, self._proc.stdout)

    def close(self) -> None:
        if self._proc.stdin:
            self._proc.stdin.close()
        self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_vocab(path: str | Path) -> Vocab:
    """Vocabulary file for external models: JSON ``{"tokens": [...]}``."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return Vocab(tuple(payload["tokens"]))
