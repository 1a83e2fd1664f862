"""Shared domain types, text normalization, and decode-configuration validation.

Everything here is immutable after construction and safe to share between
concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

from .errors import ConfigError, PreconditionError

__all__ = [
    "TokenId",
    "VocabInfo",
    "Hypothesis",
    "DecodeConfig",
    "normalize_text",
    "validate_config",
]

# Token ids are plain non-negative ints indexing a backend's vocabulary.
TokenId = int


def normalize_text(s: str) -> str:
    """Canonicalize text for embedding-store keys and metric tokenization.

    Lowercases, collapses any whitespace run to a single space, and strips
    leading/trailing whitespace. Idempotent; no stemming or lemmatization.
    """
    return " ".join(s.split()).lower()


@dataclass(frozen=True)
class VocabInfo:
    """A backend's vocabulary: size, special token ids, detokenization strings."""

    vocab_size: int
    bos_id: TokenId
    eos_id: TokenId
    token_strings: tuple[str, ...]

    def __post_init__(self):
        if self.vocab_size <= 0:
            raise ConfigError("vocab_size", f"must be positive, got {self.vocab_size}")
        strings = tuple(self.token_strings)
        object.__setattr__(self, "token_strings", strings)
        if len(strings) != self.vocab_size:
            raise ConfigError(
                "token_strings",
                f"expected {self.vocab_size} entries, got {len(strings)}",
            )
        for name, tok in (("bos_id", self.bos_id), ("eos_id", self.eos_id)):
            if not 0 <= tok < self.vocab_size:
                raise ConfigError(name, f"{tok} outside vocabulary of size {self.vocab_size}")
        if self.bos_id == self.eos_id:
            raise ConfigError("eos_id", "bos_id and eos_id must differ")

    def check_token(self, token: TokenId) -> None:
        """Raise unless ``token`` is a valid id for this vocabulary."""
        if not 0 <= token < self.vocab_size:
            raise PreconditionError(
                f"token id {token} outside vocabulary of size {self.vocab_size}"
            )


@dataclass(frozen=True)
class Hypothesis:
    """A BOS-rooted token sequence with its cumulative model log-probability.

    ``completed`` is true exactly when the last token is the EOS id under
    which the hypothesis was built; EOS appears at most once. Construct via
    :meth:`root` and :meth:`extend` so the invariants hold by construction.
    """

    tokens: tuple[TokenId, ...]
    logprob: float
    completed: bool

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise PreconditionError("a hypothesis has at least its BOS token")
        if math.isnan(self.logprob) or self.logprob > 0.0:
            raise PreconditionError(f"cumulative logprob must be <= 0, got {self.logprob}")

    @classmethod
    def root(cls, vocab: VocabInfo) -> "Hypothesis":
        """The empty partial hypothesis: just BOS, probability one."""
        return cls(tokens=(vocab.bos_id,), logprob=0.0, completed=False)

    def extend(self, token: TokenId, step_logprob: float, vocab: VocabInfo) -> "Hypothesis":
        """Append one token, accumulating its log-probability."""
        if self.completed:
            raise PreconditionError("cannot extend a completed hypothesis")
        vocab.check_token(token)
        return Hypothesis(
            tokens=self.tokens + (token,),
            logprob=self.logprob + step_logprob,
            completed=token == vocab.eos_id,
        )

    def validate(self, vocab: VocabInfo) -> None:
        """Re-check every invariant against ``vocab``; used by tests and loaders."""
        if self.tokens[0] != vocab.bos_id:
            raise PreconditionError("hypothesis must start with BOS")
        eos_count = sum(1 for t in self.tokens if t == vocab.eos_id)
        if eos_count > 1:
            raise PreconditionError("EOS appears more than once")
        if self.completed != (self.tokens[-1] == vocab.eos_id):
            raise PreconditionError("completed flag disagrees with final token")
        if eos_count == 1 and self.tokens[-1] != vocab.eos_id:
            raise PreconditionError("EOS may only appear in final position")
        for t in self.tokens:
            vocab.check_token(t)


@dataclass(frozen=True)
class DecodeConfig:
    """All knobs of the decoders.

    ``alpha`` weights faithfulness against model probability; ``max_len``
    caps hypothesis length including BOS and EOS; ``rollout_max_len`` caps
    the greedy look-ahead and must be at least ``max_len``. ``seed`` is
    reserved for batch pipelines that fan out per-row seeds; the decoders
    themselves are deterministic and never draw from it.
    """

    beam_width: int = 4
    alpha: float = 0.8
    max_len: int = 20
    rollout_max_len: int = 30
    expansions_per_beam: int = 8
    seed: int = 0
    n_best: int = 1

    def with_alpha(self, alpha: float) -> "DecodeConfig":
        return replace(self, alpha=alpha)


def validate_config(cfg: DecodeConfig) -> DecodeConfig:
    """Return ``cfg`` unchanged iff every invariant holds, else raise ConfigError."""
    if cfg.beam_width < 1:
        raise ConfigError("beam_width", f"must be positive, got {cfg.beam_width}")
    if math.isnan(cfg.alpha) or not 0.0 <= cfg.alpha <= 1.0:
        raise ConfigError("alpha", f"must lie in [0, 1], got {cfg.alpha}")
    if cfg.max_len < 2:
        raise ConfigError(
            "max_len", f"must be at least 2 to hold BOS and EOS, got {cfg.max_len}"
        )
    if cfg.rollout_max_len < cfg.max_len:
        raise ConfigError(
            "rollout_max_len",
            f"must be >= max_len ({cfg.max_len}), got {cfg.rollout_max_len}",
        )
    if cfg.expansions_per_beam < 1:
        raise ConfigError(
            "expansions_per_beam", f"must be positive, got {cfg.expansions_per_beam}"
        )
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed", f"must fit in 64 unsigned bits, got {cfg.seed}")
    if cfg.n_best < 1 or cfg.n_best > cfg.beam_width:
        raise ConfigError(
            "n_best",
            f"must be in [1, beam_width={cfg.beam_width}], got {cfg.n_best}",
        )
    return cfg
