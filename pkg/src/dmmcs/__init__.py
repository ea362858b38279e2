"""Tag-guided beam search decoding engine."""

from .corpus import Corpus, CorpusError, Example, load_corpus, save_corpus, tokenize
from .decoding import (
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
from .embeddings import (
    EmbeddingTable,
    TagEmbedding,
    UncoverableTagError,
    cosine,
    embed_tag,
    load_embeddings,
    save_embeddings,
)
from .evaluation import (
    EvalReport,
    LabelMatrix,
    bleu,
    clinical_accuracy,
    group_eval,
    labelize,
    sentence_order_analysis,
    tag_expression_gap,
    tune_alpha,
)
from .lm import (
    ModelContractViolation,
    NGramModel,
    PipeModel,
    SubprocessModel,
    Vocab,
    d_score,
    load_ngram,
    perplexity,
    save_ngram,
    train_ngram,
)
from .manifest import ENGINE_VERSION
from .tag_stats import (
    StatsError,
    StatsStore,
    TagStats,
    build_stats,
    ecdf_eval,
    load_stats,
    lookup_mmcs,
    mcs,
    save_stats,
)

__version__ = ENGINE_VERSION
