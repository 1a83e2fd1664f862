"""Beam-search decoding with greedy-rollout faithfulness guidance.

Two decoders share one skeleton. :func:`standard_beam_search` is classic
breadth-first beam search ranked by cumulative model log-probability.
:func:`faithful_beam_search` completes every candidate expansion with a
greedy rollout, scores the rolled-out caption's similarity to the input
audio in the shared embedding space, and selects beams by the weighted mix

    weighted = (1 - alpha) * P + alpha * similarity

where ``P`` is the model probability of the candidate prefix (the product
of its per-token probabilities). Using the prefix probability rather than
the last token's probability alone makes the procedure collapse exactly to
standard beam search at ``alpha = 0``: the mix is then a strictly monotone
function of the cumulative log-probability the baseline ranks by.

Selection is the only place the mix applies; beams persist pure model
log-probability, so similarity never compounds across steps. Completed
hypotheses retire to a pool and are finally ranked by

    (1 - alpha) * exp(logprob / (len - 1)) + alpha * similarity(full text)

i.e. length-normalized model probability mixed with whole-caption
faithfulness at the same alpha.

Determinism: there is no hidden randomness anywhere. Ties are broken by
higher cumulative log-probability, then lexicographically smaller token
sequence; greedy-rollout argmax ties break to the lowest token id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DecodeConfig, Hypothesis, TokenId, VocabInfo, normalize_text, validate_config
from .embedding import EmbeddingProvider, cosine_similarity
from .errors import PreconditionError
from .lm import LmSession

__all__ = [
    "Candidate",
    "ScoredHypothesis",
    "NBestList",
    "DecodeStats",
    "detokenize",
    "weighted_score",
    "greedy_rollout",
    "standard_beam_search",
    "faithful_beam_search",
]


@dataclass(frozen=True)
class Candidate:
    """One expansion of a live beam, with its look-ahead scores.

    ``step_logprob`` is the log-probability of ``token`` alone;
    ``hypothesis.logprob`` is the cumulative prefix log-probability that
    feeds the weighted mix. ``rolled_out`` is the completed greedy
    look-ahead (the hypothesis itself when it already ends in EOS).
    """

    parent: Hypothesis
    token: TokenId
    step_logprob: float
    hypothesis: Hypothesis
    rolled_out: Hypothesis
    faithfulness: float
    weighted: float


@dataclass(frozen=True)
class ScoredHypothesis:
    hypothesis: Hypothesis
    score: float


@dataclass(frozen=True)
class NBestList:
    """Completed hypotheses with final scores, best first."""

    entries: tuple[ScoredHypothesis, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        for entry in self.entries:
            if not entry.hypothesis.completed:
                raise PreconditionError("n-best lists hold completed hypotheses only")
        scores = [e.score for e in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise PreconditionError("n-best entries must be sorted by descending score")

    @property
    def hypotheses(self) -> tuple[Hypothesis, ...]:
        return tuple(e.hypothesis for e in self.entries)

    def token_sequences(self) -> tuple[tuple[TokenId, ...], ...]:
        return tuple(e.hypothesis.tokens for e in self.entries)

    def best(self) -> ScoredHypothesis:
        if not self.entries:
            raise PreconditionError("empty n-best list")
        return self.entries[0]


@dataclass
class DecodeStats:
    """Per-decode accounting, filled in by the decoders when passed in.

    ``logprob_calls_per_step`` counts backend distribution queries per beam
    step (expansions plus rollouts); the documented budget is
    beam_width * expansions_per_beam * rollout_max_len.
    """

    logprob_calls_per_step: list[int] = field(default_factory=list)
    rollout_cache_hits: int = 0
    pool_size: int = 0

    @property
    def total_logprob_calls(self) -> int:
        return sum(self.logprob_calls_per_step)


class _CountingSession:
    """Forwards to a session while counting next_logprobs calls."""

    def __init__(self, inner: LmSession):
        self._inner = inner
        self.vocab = inner.vocab
        self.context_id = inner.context_id
        self.calls = 0

    def next_logprobs(self, prefix: Sequence[TokenId]) -> np.ndarray:
        self.calls += 1
        return self._inner.next_logprobs(prefix)


def detokenize(vocab: VocabInfo, tokens: Sequence[TokenId]) -> str:
    """Join token strings with single spaces, omitting BOS/EOS wherever they occur."""
    words = []
    for t in tokens:
        vocab.check_token(t)
        if t == vocab.bos_id or t == vocab.eos_id:
            continue
        words.append(vocab.token_strings[t])
    return " ".join(words)


def weighted_score(p_i: float, sim: float, alpha: float) -> float:
    """The faithfulness-weighted mix (1 - alpha) * p_i + alpha * sim."""
    if math.isnan(p_i) or not 0.0 <= p_i <= 1.0:
        raise PreconditionError(f"p_i must lie in [0, 1], got {p_i}")
    if math.isnan(sim) or not -1.0 <= sim <= 1.0:
        raise PreconditionError(f"sim must lie in [-1, 1], got {sim}")
    if math.isnan(alpha) or not 0.0 <= alpha <= 1.0:
        raise PreconditionError(f"alpha must lie in [0, 1], got {alpha}")
    return (1.0 - alpha) * p_i + alpha * sim


def greedy_rollout(session: LmSession, prefix: Hypothesis, rollout_max_len: int) -> Hypothesis:
    """Complete a partial hypothesis by repeatedly taking the argmax token.

    Stops at EOS; a hypothesis one slot short of ``rollout_max_len`` is
    force-completed by appending EOS with that step's EOS log-probability,
    so the result never exceeds the cap (a prefix already at the cap gains
    the forced EOS as one extra token). Argmax ties break to the lowest
    token id. Deterministic.
    """
    if prefix.completed:
        raise PreconditionError("greedy_rollout requires an incomplete prefix")
    if rollout_max_len < len(prefix.tokens):
        raise PreconditionError(
            f"rollout_max_len {rollout_max_len} is shorter than the prefix ({len(prefix.tokens)})"
        )
    vocab = session.vocab
    h = prefix
    while not h.completed:
        logprobs = session.next_logprobs(h.tokens)
        if len(h.tokens) >= rollout_max_len - 1:
            token = vocab.eos_id
        else:
            token = int(np.argmax(logprobs))
        h = h.extend(token, float(logprobs[token]), vocab)
    return h


def _length_normalized(h: Hypothesis) -> float:
    # Token count excludes BOS; completed hypotheses always have >= 2 tokens.
    return h.logprob / (len(h.tokens) - 1)


def _live_key(h: Hypothesis):
    return (-h.logprob, h.tokens)


def standard_beam_search(session: LmSession, cfg: DecodeConfig) -> NBestList:
    """Classic beam search over cumulative model log-probability.

    Each step expands every live beam over the full vocabulary; expansions
    ending in EOS retire to a completed pool and the best ``beam_width``
    partial hypotheses continue. A beam one slot short of ``max_len`` only
    expands to EOS (the force-completion rule). Returns the top ``n_best``
    completed hypotheses by length-normalized log-probability
    (logprob / token count excluding BOS).
    """
    cfg = validate_config(cfg)
    vocab = session.vocab
    live = [Hypothesis.root(vocab)]
    pool: list[Hypothesis] = []
    while live:
        incomplete: list[Hypothesis] = []
        for beam in live:
            logprobs = session.next_logprobs(beam.tokens)
            if len(beam.tokens) >= cfg.max_len - 1:
                moves: Sequence[int] = (vocab.eos_id,)
            else:
                moves = range(vocab.vocab_size)
            for token in moves:
                child = beam.extend(int(token), float(logprobs[token]), vocab)
                (pool if child.completed else incomplete).append(child)
        incomplete.sort(key=_live_key)
        live = incomplete[: cfg.beam_width]
    ranked = sorted(pool, key=lambda h: (-_length_normalized(h), -h.logprob, h.tokens))
    return NBestList(
        tuple(ScoredHypothesis(h, _length_normalized(h)) for h in ranked[: cfg.n_best])
    )


def faithful_beam_search(
    session: LmSession,
    provider: EmbeddingProvider,
    cfg: DecodeConfig,
    context_id: str | None = None,
    *,
    use_rollout_cache: bool = True,
    stats: DecodeStats | None = None,
) -> NBestList:
    """Beam search re-ranked per step by audio faithfulness of greedy rollouts.

    Per step, every live beam proposes its ``expansions_per_beam`` most
    probable non-EOS tokens plus its EOS completion (so every caption the
    baseline can finish is reachable here too). Incomplete candidates are
    completed by :func:`greedy_rollout`, the rollout text is scored against
    the clip with :func:`clap_score_at`, and the ``beam_width`` candidates
    with the highest weighted mix survive. Completed candidates always
    retire to the pool, which is finally re-ranked by length-normalized
    model probability mixed with whole-caption faithfulness.

    An empty rollout text (EOS directly after BOS) scores faithfulness 0,
    since similarity to an empty caption is undefined.

    With ``alpha = 0`` and ``expansions_per_beam >= beam_width`` the result
    is token-identical to :func:`standard_beam_search`. Rollouts and
    faithfulness scores are cached per prefix/text within one call;
    ``use_rollout_cache=False`` disables the cache without changing any
    output token.
    """
    cfg = validate_config(cfg)
    ctx = session.context_id if context_id is None else context_id
    # Fail before any model work if the clip has no embedding; one fetch
    # serves every candidate of this decode.
    audio_vec = provider.embed_audio(ctx)

    vocab = session.vocab
    counting = _CountingSession(session)
    rollout_cache: dict[tuple[TokenId, ...], Hypothesis] = {}
    faith_cache: dict[str, float] = {}

    def rollout(h: Hypothesis) -> Hypothesis:
        if h.completed:
            return h
        if use_rollout_cache and h.tokens in rollout_cache:
            if stats is not None:
                stats.rollout_cache_hits += 1
            return rollout_cache[h.tokens]
        rolled = greedy_rollout(counting, h, cfg.rollout_max_len)
        if use_rollout_cache:
            rollout_cache[h.tokens] = rolled
        return rolled

    def faithfulness(h: Hypothesis) -> float:
        text = detokenize(vocab, h.tokens)
        if not text:
            return 0.0
        if use_rollout_cache and text in faith_cache:
            return faith_cache[text]
        score = cosine_similarity(audio_vec, provider.embed_text(normalize_text(text)))
        if use_rollout_cache:
            faith_cache[text] = score
        return score

    live = [Hypothesis.root(vocab)]
    pool: list[Hypothesis] = []
    while live:
        calls_before = counting.calls
        candidates: list[Candidate] = []
        for beam in live:
            logprobs = counting.next_logprobs(beam.tokens)
            if len(beam.tokens) >= cfg.max_len - 1:
                tokens: list[int] = [vocab.eos_id]
            else:
                by_prob = sorted(
                    (t for t in range(vocab.vocab_size) if t != vocab.eos_id),
                    key=lambda t: (-logprobs[t], t),
                )
                tokens = by_prob[: cfg.expansions_per_beam]
                tokens.append(vocab.eos_id)
            for token in tokens:
                child = beam.extend(token, float(logprobs[token]), vocab)
                rolled = rollout(child)
                faith = faithfulness(rolled)
                mixed = weighted_score(math.exp(child.logprob), faith, cfg.alpha)
                candidates.append(
                    Candidate(
                        parent=beam,
                        token=token,
                        step_logprob=float(logprobs[token]),
                        hypothesis=child,
                        rolled_out=rolled,
                        faithfulness=faith,
                        weighted=mixed,
                    )
                )
        if stats is not None:
            stats.logprob_calls_per_step.append(counting.calls - calls_before)
        survivors: list[Candidate] = []
        for cand in candidates:
            if cand.hypothesis.completed:
                pool.append(cand.hypothesis)
            else:
                survivors.append(cand)
        survivors.sort(key=lambda c: (-c.weighted, -c.hypothesis.logprob, c.hypothesis.tokens))
        live = [c.hypothesis for c in survivors[: cfg.beam_width]]

    def final_entry(h: Hypothesis) -> tuple[ScoredHypothesis, float]:
        norm = _length_normalized(h)
        score = weighted_score(math.exp(norm), faithfulness(h), cfg.alpha)
        return ScoredHypothesis(h, score), norm

    scored = [final_entry(h) for h in pool]
    scored.sort(key=lambda sn: (-sn[0].score, -sn[1], -sn[0].hypothesis.logprob, sn[0].hypothesis.tokens))
    if stats is not None:
        stats.pool_size = len(pool)
    return NBestList(tuple(entry for entry, _ in scored[: cfg.n_best]))
