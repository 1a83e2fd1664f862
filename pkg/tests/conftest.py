"""Shared fixtures and independent brute-force oracles.

The oracles recompute expected values through routes the library does not
use (explicit enumeration, naive counting, memoized recursion) so the
search, clipping, and LCS logic are checked against genuinely independent
code paths.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import pytest

from faithdec.core import DecodeConfig, Hypothesis, VocabInfo, normalize_text
from faithdec.embedding import cosine_similarity
from faithdec.lm import LmSession, TabularLM


# ---------------------------------------------------------------------------
# Decoder oracles: exhaustive enumeration of the sequence tree
# ---------------------------------------------------------------------------


def enumerate_completions(session: LmSession, max_len: int):
    """Every completable sequence within the cap, with cumulative logprob.

    A sequence is BOS, any non-EOS tokens, then EOS, with total length at
    most ``max_len``; the EOS step contributes that prefix's EOS
    log-probability exactly as the decoders accumulate it.
    """
    vocab = session.vocab
    results: list[tuple[tuple[int, ...], float]] = []

    def visit(prefix: tuple[int, ...], logprob: float) -> None:
        lp = session.next_logprobs(prefix)
        results.append((prefix + (vocab.eos_id,), logprob + float(lp[vocab.eos_id])))
        if len(prefix) < max_len - 1:
            for t in range(vocab.vocab_size):
                if t == vocab.eos_id:
                    continue
                visit(prefix + (t,), logprob + float(lp[t]))

    visit((vocab.bos_id,), 0.0)
    return results


def oracle_standard_nbest(session: LmSession, cfg: DecodeConfig):
    """Argmax-by-enumeration of the baseline ranking (length-normalized logprob)."""
    seqs = enumerate_completions(session, cfg.max_len)
    ranked = sorted(
        seqs, key=lambda sl: (-(sl[1] / (len(sl[0]) - 1)), -sl[1], sl[0])
    )
    return [seq for seq, _ in ranked[: cfg.n_best]]


def oracle_faithful_ranking(session, provider, context_id, cfg: DecodeConfig):
    """All completions ranked by the guided decoder's final score, by enumeration."""
    vocab = session.vocab
    audio = provider.embed_audio(context_id)
    rows = []
    for seq, logprob in enumerate_completions(session, cfg.max_len):
        words = [
            vocab.token_strings[t]
            for t in seq
            if t != vocab.bos_id and t != vocab.eos_id
        ]
        text = " ".join(words)
        if text:
            faith = cosine_similarity(audio, provider.embed_text(normalize_text(text)))
        else:
            faith = 0.0
        norm = logprob / (len(seq) - 1)
        score = (1.0 - cfg.alpha) * math.exp(norm) + cfg.alpha * faith
        rows.append((score, norm, logprob, seq))
    rows.sort(key=lambda r: (-r[0], -r[1], -r[2], r[3]))
    return rows


def count_incomplete_prefixes(vocab_size: int, depth: int) -> int:
    """Incomplete prefixes of a given content depth: (vocab - 1)^depth."""
    return (vocab_size - 1) ** depth


def exhaustive_beam_width(vocab_size: int, max_len: int) -> int:
    """Beam width that provably never prunes for the given shape."""
    return max(
        count_incomplete_prefixes(vocab_size, d) for d in range(0, max(1, max_len - 1))
    )


# ---------------------------------------------------------------------------
# Metric oracles
# ---------------------------------------------------------------------------


def oracle_bleu1(instances) -> float:
    """Corpus BLEU-1 via naive per-word counting (no Counter)."""
    matched = 0
    total = 0
    cand_total = 0
    ref_total = 0
    for inst in instances:
        cand = inst.candidate.split()
        for word in sorted(set(cand)):
            in_cand = sum(1 for w in cand if w == word)
            best_ref = 0
            for ref in inst.references:
                n = sum(1 for w in ref.split() if w == word)
                if n > best_ref:
                    best_ref = n
            matched += min(in_cand, best_ref)
        total += len(cand)
        cand_total += len(cand)
        lengths = [len(r.split()) for r in inst.references]
        ref_total += min(lengths, key=lambda n: (abs(n - len(cand)), n))
    if total == 0:
        return 0.0
    precision = matched / total
    if cand_total >= ref_total:
        return precision
    return precision * math.exp(1.0 - ref_total / cand_total)


def oracle_lcs(a: tuple[str, ...], b: tuple[str, ...]) -> int:
    """LCS length via memoized recursion (independent of the DP table)."""

    @lru_cache(maxsize=None)
    def go(i: int, j: int) -> int:
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def oracle_bow_tt(vocab: VocabInfo, a: str, b: str) -> float:
    """Bag-of-words text-text similarity via pure-python counting."""

    def unit_counts(text: str) -> list[float]:
        counts = [0.0] * vocab.vocab_size
        for word in normalize_text(text).split():
            for i, s in enumerate(vocab.token_strings):
                if normalize_text(s) == word:
                    counts[i] += 1.0
                    break
        norm = math.sqrt(math.fsum(c * c for c in counts))
        if norm == 0.0:
            return counts
        return [c / norm for c in counts]

    u = unit_counts(a)
    v = unit_counts(b)
    if u == v:
        return 1.0
    nu = math.sqrt(math.fsum(x * x for x in u))
    nv = math.sqrt(math.fsum(x * x for x in v))
    value = math.fsum(x * y for x, y in zip(u, v)) / (nu * nv)
    return min(1.0, max(-1.0, value))


# ---------------------------------------------------------------------------
# Small builders
# ---------------------------------------------------------------------------


@pytest.fixture
def three_token_vocab() -> VocabInfo:
    return VocabInfo(vocab_size=3, bos_id=0, eos_id=1, token_strings=("<s>", "</s>", "w0"))


def make_hypothesis(vocab: VocabInfo, tokens, logprob=-1.0) -> Hypothesis:
    h = Hypothesis(tokens=tuple(tokens), logprob=logprob, completed=tokens[-1] == vocab.eos_id)
    h.validate(vocab)
    return h


def write_lm_file(path, lines) -> str:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)
