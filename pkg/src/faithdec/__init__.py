"""Faithfulness-guided beam-search decoding for audio captioning.

The package decodes captions from any conditional language model behind the
:class:`~faithdec.lm.LmSession` contract, steering beams toward the input
audio with similarities computed in a shared audio-text embedding space,
and ships the matching hallucination metrics and the hallucinated-caption
augmentation pipeline.
"""

from .core import DecodeConfig, Hypothesis, TokenId, VocabInfo, normalize_text, validate_config
from .decoder import (
    Candidate,
    DecodeStats,
    NBestList,
    ScoredHypothesis,
    detokenize,
    faithful_beam_search,
    greedy_rollout,
    standard_beam_search,
    weighted_score,
)
from .embedding import (
    BagOfWordsOracle,
    EmbeddingProvider,
    FileEmbeddingStore,
    clap_score_at,
    clap_score_tt,
    cosine_similarity,
    load_embedding_store,
)
from .lm import LmBackend, LmSession, TabularLM, load_tabular_lm
from .metrics import (
    EvalInstance,
    MetricReport,
    SplitComparison,
    bleu1,
    clapscore_tt_metric,
    evaluate,
    format_report_table,
    rouge_l,
    split_report,
)
from .augmenter import (
    AugmentRecord,
    DatasetRow,
    HttpLlmClient,
    LlmClient,
    MockLlmClient,
    PromptTemplates,
    QuarantinedRow,
    RankedTagList,
    RetryingLlmClient,
    augment_dataset,
    inject_tags,
    load_augment_dataset,
    paraphrase,
    select_dissimilar_tags,
)
from .remote import RemoteModel, RemoteSession

__version__ = "0.1.0"

__all__ = [
    "AugmentRecord",
    "BagOfWordsOracle",
    "Candidate",
    "DatasetRow",
    "DecodeConfig",
    "DecodeStats",
    "EmbeddingProvider",
    "EvalInstance",
    "FileEmbeddingStore",
    "HttpLlmClient",
    "Hypothesis",
    "LlmClient",
    "LmBackend",
    "LmSession",
    "MetricReport",
    "MockLlmClient",
    "NBestList",
    "PromptTemplates",
    "QuarantinedRow",
    "RankedTagList",
    "RemoteModel",
    "RemoteSession",
    "RetryingLlmClient",
    "ScoredHypothesis",
    "SplitComparison",
    "TabularLM",
    "TokenId",
    "VocabInfo",
    "augment_dataset",
    "bleu1",
    "clap_score_at",
    "clap_score_tt",
    "clapscore_tt_metric",
    "cosine_similarity",
    "detokenize",
    "evaluate",
    "faithful_beam_search",
    "format_report_table",
    "greedy_rollout",
    "inject_tags",
    "load_augment_dataset",
    "load_embedding_store",
    "load_tabular_lm",
    "normalize_text",
    "paraphrase",
    "rouge_l",
    "select_dissimilar_tags",
    "split_report",
    "standard_beam_search",
    "validate_config",
    "weighted_score",
]
