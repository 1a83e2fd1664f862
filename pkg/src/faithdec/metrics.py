"""Desk-scale caption evaluation: BLEU-1, ROUGE-L and text-text CLAP scoring.

Tokenization for the n-gram metrics is whitespace splitting after
:func:`faithdec.core.normalize_text`, punctuation kept attached; exact
parity with external captioning toolkits is a non-goal. Multi-reference
similarity defaults to the max over references (annotators describe the
same audio with different vocabulary), with mean-over-references behind a
flag.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .core import normalize_text
from .embedding import EmbeddingProvider, clap_score_tt
from .errors import MissingEmbeddingError, PreconditionError

__all__ = [
    "EvalInstance",
    "InstanceScores",
    "MetricReport",
    "SplitComparison",
    "bleu1",
    "rouge_l",
    "clapscore_tt_metric",
    "evaluate",
    "split_report",
    "format_report_table",
]

ROUGE_BETA = 1.2  # captioning-toolkit convention


@dataclass(frozen=True)
class EvalInstance:
    """One candidate caption with its human references, normalized on ingestion."""

    context_id: str
    candidate: str
    references: tuple[str, ...]

    def __post_init__(self):
        refs = tuple(normalize_text(r) for r in self.references)
        if not refs:
            raise PreconditionError(f"instance {self.context_id!r} has no references")
        object.__setattr__(self, "candidate", normalize_text(self.candidate))
        object.__setattr__(self, "references", refs)


def _tokens(text: str) -> list[str]:
    return text.split()


def bleu1(instances: Sequence[EvalInstance]) -> float:
    """Corpus-level BLEU with unigram precision only.

    Candidate counts are clipped against the maximum reference count per
    word; the brevity penalty uses the closest reference length (ties to
    the shorter). Empty candidates contribute zero counts.
    """
    if not instances:
        raise PreconditionError("bleu1 requires at least one instance")
    matched = 0
    total = 0
    cand_len = 0
    ref_len = 0
    for inst in instances:
        cand = _tokens(inst.candidate)
        counts = Counter(cand)
        max_ref = Counter()
        for ref in inst.references:
            for word, n in Counter(_tokens(ref)).items():
                if n > max_ref[word]:
                    max_ref[word] = n
        matched += sum(min(n, max_ref[word]) for word, n in counts.items())
        total += len(cand)
        cand_len += len(cand)
        ref_len += _closest_length([len(_tokens(r)) for r in inst.references], len(cand))
    if total == 0:
        return 0.0
    precision = matched / total
    if cand_len >= ref_len:
        brevity = 1.0
    else:
        brevity = math.exp(1.0 - ref_len / cand_len)
    return precision * brevity


def _closest_length(ref_lengths: Sequence[int], cand_length: int) -> int:
    return min(ref_lengths, key=lambda n: (abs(n - cand_length), n))


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Classic O(len(a) * len(b)) longest-common-subsequence length."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def _rouge_l_instance(inst: EvalInstance, beta: float) -> float:
    cand = _tokens(inst.candidate)
    best = 0.0
    for ref in inst.references:
        ref_tokens = _tokens(ref)
        lcs = _lcs_length(cand, ref_tokens)
        if lcs == 0:
            continue
        precision = lcs / len(cand)
        recall = lcs / len(ref_tokens)
        f = (1.0 + beta * beta) * precision * recall / (recall + beta * beta * precision)
        best = max(best, f)
    return best


def rouge_l(instances: Sequence[EvalInstance], beta: float = ROUGE_BETA) -> float:
    """Mean over instances of the best LCS F-score against any reference."""
    if not instances:
        raise PreconditionError("rouge_l requires at least one instance")
    return math.fsum(_rouge_l_instance(i, beta) for i in instances) / len(instances)


def _clap_tt_instance(
    provider: EmbeddingProvider, inst: EvalInstance, reduce: str
) -> float:
    scores = [clap_score_tt(provider, inst.candidate, ref) for ref in inst.references]
    if reduce == "max":
        return max(scores)
    if reduce == "mean":
        return math.fsum(scores) / len(scores)
    raise PreconditionError(f"unknown reduce mode {reduce!r}")


def clapscore_tt_metric(
    provider: EmbeddingProvider,
    instances: Sequence[EvalInstance],
    *,
    reduce: str = "max",
    skip_missing: bool = False,
) -> float:
    """Mean over instances of the candidate's similarity to its references.

    A missing embedding raises unless ``skip_missing`` is set, in which case
    the instance is excluded from the mean.
    """
    if not instances:
        raise PreconditionError("clapscore_tt_metric requires at least one instance")
    scores = []
    for inst in instances:
        try:
            scores.append(_clap_tt_instance(provider, inst, reduce))
        except MissingEmbeddingError:
            if not skip_missing:
                raise
    if not scores:
        raise PreconditionError("every instance was excluded for missing embeddings")
    return math.fsum(scores) / len(scores)


@dataclass(frozen=True)
class InstanceScores:
    context_id: str
    candidate: str
    scores: dict[str, float | None]


@dataclass(frozen=True)
class MetricReport:
    """Corpus and per-instance scores for one evaluation split."""

    split: str
    corpus: dict[str, float]
    instances: tuple[InstanceScores, ...]

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "corpus": dict(self.corpus),
            "instances": [
                {"context_id": i.context_id, "candidate": i.candidate, "scores": dict(i.scores)}
                for i in self.instances
            ],
        }


def evaluate(
    instances: Sequence[EvalInstance],
    provider: EmbeddingProvider | None = None,
    *,
    split: str = "none",
    reduce: str = "max",
    skip_missing: bool = False,
) -> MetricReport:
    """Score a corpus with every available metric.

    BLEU-1 per-instance entries are sentence-level (own brevity penalty);
    the corpus entry pools clipped counts as usual. CLAPScore_tt is skipped
    entirely when no provider is given.
    """
    if not instances:
        raise PreconditionError("evaluate requires at least one instance")
    corpus: dict[str, float] = {
        "bleu1": bleu1(instances),
        "rouge_l": rouge_l(instances),
    }
    per_instance: list[dict[str, float | None]] = [
        {"bleu1": bleu1([inst]), "rouge_l": _rouge_l_instance(inst, ROUGE_BETA)}
        for inst in instances
    ]
    if provider is not None:
        clap_scores: list[float | None] = []
        for inst in instances:
            try:
                clap_scores.append(_clap_tt_instance(provider, inst, reduce))
            except MissingEmbeddingError:
                if not skip_missing:
                    raise
                clap_scores.append(None)
        present = [s for s in clap_scores if s is not None]
        if not present:
            raise PreconditionError("every instance was excluded for missing embeddings")
        corpus["clapscore_tt"] = math.fsum(present) / len(present)
        for row, score in zip(per_instance, clap_scores):
            row["clapscore_tt"] = score
    return MetricReport(
        split=split,
        corpus=corpus,
        instances=tuple(
            InstanceScores(inst.context_id, inst.candidate, row)
            for inst, row in zip(instances, per_instance)
        ),
    )


@dataclass(frozen=True)
class SplitComparison:
    hallucinated: MetricReport
    non_hallucinated: MetricReport
    deltas: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "hallucinated": self.hallucinated.to_dict(),
            "non_hallucinated": self.non_hallucinated.to_dict(),
            "deltas": dict(self.deltas),
        }


def split_report(
    hallucinated: Sequence[EvalInstance],
    clean: Sequence[EvalInstance],
    provider: EmbeddingProvider | None = None,
    *,
    reduce: str = "max",
    skip_missing: bool = False,
) -> SplitComparison:
    """Score both splits and report per-metric deltas (clean minus hallucinated)."""
    if not hallucinated or not clean:
        raise PreconditionError("split_report requires non-empty splits")
    rep_h = evaluate(
        hallucinated, provider, split="hallucinated", reduce=reduce, skip_missing=skip_missing
    )
    rep_c = evaluate(
        clean, provider, split="non_hallucinated", reduce=reduce, skip_missing=skip_missing
    )
    deltas = {m: rep_c.corpus[m] - rep_h.corpus[m] for m in rep_h.corpus if m in rep_c.corpus}
    return SplitComparison(hallucinated=rep_h, non_hallucinated=rep_c, deltas=deltas)


def format_report_table(reports: Iterable[MetricReport]) -> str:
    """Plain-text mirror of one or more reports: one row per split."""
    reports = list(reports)
    metrics: list[str] = []
    for rep in reports:
        for name in rep.corpus:
            if name not in metrics:
                metrics.append(name)
    header = ["split"] + metrics
    rows = [header]
    for rep in reports:
        rows.append(
            [rep.split] + [_fmt(rep.corpus.get(name)) for name in metrics]
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for idx, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:.4f}"
