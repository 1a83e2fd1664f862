"""Conditional language-model backends.

The decoder only ever sees the :class:`LmSession` contract: a fixed
vocabulary plus ``next_logprobs(prefix)`` giving the full next-token
distribution conditioned on an opaque ``context_id`` (the audio clip) and
the prefix. :class:`TabularLM` is the deterministic desk-scale backend used
for verification; the wire-protocol client for real models lives in
:mod:`faithdec.remote`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from .core import TokenId, VocabInfo
from .errors import FormatError, PreconditionError

__all__ = [
    "LmSession",
    "LmBackend",
    "TabularLM",
    "load_tabular_lm",
    "check_prefix",
    "PROB_SUM_TOL",
]

# Stored probability rows must sum to one within this tolerance.
PROB_SUM_TOL = 1e-9


@runtime_checkable
class LmSession(Protocol):
    """One conditioning context of a language model.

    The same (backend, context_id, prefix) always yields the same
    distribution; the vocabulary is fixed for the session lifetime.
    """

    context_id: str
    vocab: VocabInfo

    def next_logprobs(self, prefix: Sequence[TokenId]) -> np.ndarray:
        """Next-token log-probabilities over the full vocabulary.

        ``prefix`` must start with BOS and contain no EOS. The exponentials
        of the returned vector sum to 1 within 1e-6.
        """
        ...


@runtime_checkable
class LmBackend(Protocol):
    def open_session(self, context_id: str) -> LmSession: ...


def check_prefix(vocab: VocabInfo, prefix: Sequence[TokenId]) -> tuple[TokenId, ...]:
    """Validate the next_logprobs precondition and return the prefix as a tuple."""
    prefix = tuple(int(t) for t in prefix)
    if not prefix or prefix[0] != vocab.bos_id:
        raise PreconditionError(f"prefix must start with BOS id {vocab.bos_id}, got {prefix!r}")
    if vocab.eos_id in prefix:
        raise PreconditionError("prefix must not contain EOS")
    for t in prefix:
        vocab.check_token(t)
    return prefix


def _check_prob_row(probs: np.ndarray, vocab_size: int, what: str) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (vocab_size,):
        raise FormatError(f"{what}: expected {vocab_size} probabilities, got {probs.shape}")
    if not np.all(np.isfinite(probs)) or np.any(probs < 0.0):
        raise FormatError(f"{what}: probabilities must be finite and non-negative")
    total = float(probs.sum())
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise FormatError(f"{what}: probabilities sum to {total!r}, not 1")
    probs = probs.copy()
    probs.setflags(write=False)
    return probs


def _log_row(probs: np.ndarray) -> np.ndarray:
    # Zero-probability entries map to -inf; tiny positive rounding above 1
    # is clamped so cumulative hypothesis logprobs stay <= 0.
    with np.errstate(divide="ignore"):
        logs = np.minimum(np.log(probs), 0.0)
    logs.setflags(write=False)
    return logs


class TabularLM:
    """An explicit conditional next-token probability table.

    ``table`` maps (context_id, prefix-including-BOS) to a probability
    vector over the vocabulary; any unlisted prefix falls back to
    ``fallback`` (uniform unless the file overrides it), so every prefix is
    well-defined and brute-force oracles can enumerate all sequences.
    Read-only after construction and freely shareable.
    """

    def __init__(
        self,
        vocab: VocabInfo,
        table: Mapping[tuple[str, tuple[TokenId, ...]], Sequence[float]],
        fallback: Sequence[float] | None = None,
    ):
        self.vocab = vocab
        if fallback is None:
            fallback = np.full(vocab.vocab_size, 1.0 / vocab.vocab_size)
        self._fallback = _check_prob_row(np.asarray(fallback), vocab.vocab_size, "fallback")
        self._fallback_logs = _log_row(self._fallback)
        self._probs: dict[tuple[str, tuple[TokenId, ...]], np.ndarray] = {}
        self._logs: dict[tuple[str, tuple[TokenId, ...]], np.ndarray] = {}
        for (context_id, prefix), row in table.items():
            prefix = check_prefix(vocab, prefix)
            key = (str(context_id), prefix)
            if key in self._probs:
                raise FormatError(f"duplicate table entry for {key!r}")
            probs = _check_prob_row(np.asarray(row), vocab.vocab_size, f"row {key!r}")
            self._probs[key] = probs
            self._logs[key] = _log_row(probs)

    def open_session(self, context_id: str) -> "TabularSession":
        """Unknown ids are allowed; their prefixes resolve to the fallback."""
        return TabularSession(backend=self, context_id=str(context_id), vocab=self.vocab)

    def logprobs_for(self, context_id: str, prefix: tuple[TokenId, ...]) -> np.ndarray:
        return self._logs.get((context_id, prefix), self._fallback_logs)

    def probs_for(self, context_id: str, prefix: tuple[TokenId, ...]) -> np.ndarray:
        return self._probs.get((context_id, prefix), self._fallback)


@dataclass(frozen=True)
class TabularSession:
    backend: TabularLM
    context_id: str
    vocab: VocabInfo

    def next_logprobs(self, prefix: Sequence[TokenId]) -> np.ndarray:
        prefix = check_prefix(self.vocab, prefix)
        return self.backend.logprobs_for(self.context_id, prefix)


def _parse_floats(parts: Iterable[str], path: str, line_no: int) -> np.ndarray:
    try:
        return np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"bad float: {exc}", path=path, line=line_no) from None


def load_tabular_lm(path: str) -> TabularLM:
    """Load a :class:`TabularLM` from its text format.

    Format (UTF-8, ``#`` starts a comment line)::

        vocab <n> bos <id> eos <id>
        token <id> <string>              # one per token id
        fallback <p0> ... <p{n-1}>       # optional, default uniform
        row <context_id> <prefix> <p0> ... <p{n-1}>

    ``<prefix>`` lists the token ids after BOS, comma-separated; ``-``
    denotes the BOS-only prefix.
    """
    header: tuple[int, int, int] | None = None
    tokens: dict[int, str] = {}
    fallback: np.ndarray | None = None
    fallback_line: int | None = None
    rows: list[tuple[int, str, tuple[int, ...], np.ndarray]] = []

    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            kind = parts[0]
            if kind == "vocab":
                if header is not None:
                    raise FormatError("duplicate vocab header", path=path, line=line_no)
                if len(parts) != 6 or parts[2] != "bos" or parts[4] != "eos":
                    raise FormatError(
                        "header must be 'vocab <n> bos <id> eos <id>'", path=path, line=line_no
                    )
                try:
                    header = (int(parts[1]), int(parts[3]), int(parts[5]))
                except ValueError:
                    raise FormatError("header ids must be integers", path=path, line=line_no) from None
            elif kind == "token":
                if header is None:
                    raise FormatError("token line before vocab header", path=path, line=line_no)
                if len(parts) < 3:
                    raise FormatError("token line needs '<id> <string>'", path=path, line=line_no)
                try:
                    tok_id = int(parts[1])
                except ValueError:
                    raise FormatError("token id must be an integer", path=path, line=line_no) from None
                if not 0 <= tok_id < header[0]:
                    raise FormatError(
                        f"token id {tok_id} outside vocab of size {header[0]}",
                        path=path,
                        line=line_no,
                    )
                if tok_id in tokens:
                    raise FormatError(f"duplicate token id {tok_id}", path=path, line=line_no)
                tokens[tok_id] = " ".join(parts[2:])
            elif kind == "fallback":
                if header is None:
                    raise FormatError("fallback line before vocab header", path=path, line=line_no)
                if fallback is not None:
                    raise FormatError("duplicate fallback line", path=path, line=line_no)
                fallback = _parse_floats(parts[1:], path, line_no)
                fallback_line = line_no
            elif kind == "row":
                if header is None:
                    raise FormatError("row line before vocab header", path=path, line=line_no)
                if len(parts) < 3 + header[0]:
                    raise FormatError(
                        f"row needs context, prefix and {header[0]} probabilities",
                        path=path,
                        line=line_no,
                    )
                context_id = parts[1]
                prefix_field = parts[2]
                if prefix_field == "-":
                    suffix: tuple[int, ...] = ()
                else:
                    try:
                        suffix = tuple(int(p) for p in prefix_field.split(","))
                    except ValueError:
                        raise FormatError(
                            f"prefix ids must be comma-separated integers, got {prefix_field!r}",
                            path=path,
                            line=line_no,
                        ) from None
                probs = _parse_floats(parts[3:], path, line_no)
                rows.append((line_no, context_id, suffix, probs))
            else:
                raise FormatError(f"unknown directive {kind!r}", path=path, line=line_no)

    if header is None:
        raise FormatError("missing 'vocab' header", path=path)
    vocab_size, bos_id, eos_id = header
    missing = [i for i in range(vocab_size) if i not in tokens]
    if missing:
        raise FormatError(f"missing token lines for ids {missing}", path=path)
    vocab = VocabInfo(
        vocab_size=vocab_size,
        bos_id=bos_id,
        eos_id=eos_id,
        token_strings=tuple(tokens[i] for i in range(vocab_size)),
    )

    table: dict[tuple[str, tuple[int, ...]], np.ndarray] = {}
    for line_no, context_id, suffix, probs in rows:
        prefix = (bos_id,) + suffix
        try:
            prefix = check_prefix(vocab, prefix)
        except PreconditionError as exc:
            raise FormatError(str(exc), path=path, line=line_no) from None
        key = (context_id, prefix)
        if key in table:
            raise FormatError(f"duplicate row for {key!r}", path=path, line=line_no)
        try:
            table[key] = _check_prob_row(probs, vocab_size, f"row {key!r}")
        except FormatError as exc:
            raise FormatError(str(exc), path=path, line=line_no) from None

    if fallback is not None:
        try:
            fallback = _check_prob_row(fallback, vocab_size, "fallback")
        except FormatError as exc:
            raise FormatError(str(exc), path=path, line=fallback_line) from None

    return TabularLM(vocab=vocab, table=table, fallback=fallback)
