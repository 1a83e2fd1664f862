"""Shared audio-text embedding providers and cosine similarity scoring.

A provider projects audio clips (by context id) and texts into one shared
space; similarity between the projections is plain cosine. Vectors are
stored unnormalized and normalized inside :func:`cosine_similarity`, the
one canonical normalization point. Sums use ``math.fsum`` so scores are
exactly reproducible regardless of BLAS vectorization.
"""

from __future__ import annotations

import math
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from .core import VocabInfo, normalize_text
from .errors import (
    DimensionMismatchError,
    FormatError,
    MissingEmbeddingError,
    ZeroVectorError,
)

__all__ = [
    "EmbeddingProvider",
    "FileEmbeddingStore",
    "BagOfWordsOracle",
    "cosine_similarity",
    "clap_score_at",
    "clap_score_tt",
    "load_embedding_store",
]


@runtime_checkable
class EmbeddingProvider(Protocol):
    """Projects texts and audio clips into one shared embedding space."""

    dim: int

    def embed_text(self, text: str) -> np.ndarray: ...

    def embed_audio(self, context_id: str) -> np.ndarray: ...


def _as_vector(values: Sequence[float], what: str = "vector") -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise DimensionMismatchError(f"{what} must be a non-empty 1-D vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ZeroVectorError(f"{what} contains non-finite values")
    return vec


def cosine_similarity(x: Sequence[float], y: Sequence[float]) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1].

    Raises :class:`DimensionMismatchError` on unequal dimensions and
    :class:`ZeroVectorError` when either vector has no direction.
    """
    x = _as_vector(x, "x")
    y = _as_vector(y, "y")
    if x.shape != y.shape:
        raise DimensionMismatchError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    norm_x = math.sqrt(math.fsum(x * x))
    norm_y = math.sqrt(math.fsum(y * y))
    if norm_x == 0.0 or norm_y == 0.0:
        raise ZeroVectorError("cosine similarity is undefined for an all-zero vector")
    if np.array_equal(x, y):
        return 1.0  # self-similarity is exactly one, untouched by rounding
    value = math.fsum(x * y) / (norm_x * norm_y)
    return min(1.0, max(-1.0, value))


def clap_score_at(provider: EmbeddingProvider, text: str, context_id: str) -> float:
    """Audio-text similarity: cosine of the clip's and the caption's projections."""
    audio = provider.embed_audio(context_id)
    return cosine_similarity(audio, provider.embed_text(normalize_text(text)))


def clap_score_tt(provider: EmbeddingProvider, a: str, b: str) -> float:
    """Text-text similarity between two captions under one provider."""
    return cosine_similarity(
        provider.embed_text(normalize_text(a)),
        provider.embed_text(normalize_text(b)),
    )


class FileEmbeddingStore:
    """Precomputed projections loaded from a file.

    Text lookups are exact-match on :func:`normalize_text` output; there is
    no nearest-neighbor fallback, so a miss raises instead of silently
    corrupting an experiment.
    """

    def __init__(
        self,
        dim: int,
        text_map: Mapping[str, Sequence[float]],
        audio_map: Mapping[str, Sequence[float]],
    ):
        if dim <= 0:
            raise DimensionMismatchError(f"dim must be positive, got {dim}")
        self.dim = int(dim)
        self._text: dict[str, np.ndarray] = {}
        self._audio: dict[str, np.ndarray] = {}
        for target, source, label in (
            (self._text, text_map, "text"),
            (self._audio, audio_map, "audio"),
        ):
            for key, values in source.items():
                key = normalize_text(key) if label == "text" else str(key)
                vec = _as_vector(values, f"{label} entry {key!r}")
                if vec.shape[0] != self.dim:
                    raise DimensionMismatchError(
                        f"{label} entry {key!r} has dim {vec.shape[0]}, store dim is {self.dim}"
                    )
                if not np.any(vec):
                    raise ZeroVectorError(f"{label} entry {key!r} is all-zero")
                if key in target:
                    raise FormatError(f"duplicate {label} key {key!r}")
                vec = vec.copy()
                vec.setflags(write=False)
                target[key] = vec

    def embed_text(self, text: str) -> np.ndarray:
        key = normalize_text(text)
        try:
            return self._text[key]
        except KeyError:
            raise MissingEmbeddingError(f"no text embedding stored for {key!r}") from None

    def embed_audio(self, context_id: str) -> np.ndarray:
        try:
            return self._audio[context_id]
        except KeyError:
            raise MissingEmbeddingError(
                f"no audio embedding stored for context {context_id!r}"
            ) from None

    def audio_ids(self) -> tuple[str, ...]:
        return tuple(self._audio)

    def text_keys(self) -> tuple[str, ...]:
        return tuple(self._text)

    def __len__(self) -> int:
        return len(self._text) + len(self._audio)


class BagOfWordsOracle:
    """Synthetic provider whose text projection is the L2-normalized
    token-count vector under a vocabulary, making every similarity
    analytically computable in tests.

    Words outside the vocabulary contribute nothing; a text with no known
    words embeds to the zero vector, which any similarity call rejects
    loudly.
    """

    def __init__(self, vocab: VocabInfo, audio_map: Mapping[str, Sequence[float]]):
        self.vocab = vocab
        self.dim = vocab.vocab_size
        self._index: dict[str, int] = {}
        for i, s in enumerate(vocab.token_strings):
            self._index.setdefault(normalize_text(s), i)
        self._audio: dict[str, np.ndarray] = {}
        for context_id, values in audio_map.items():
            vec = _as_vector(values, f"audio entry {context_id!r}")
            if vec.shape[0] != self.dim:
                raise DimensionMismatchError(
                    f"audio entry {context_id!r} has dim {vec.shape[0]}, expected {self.dim}"
                )
            vec = vec.copy()
            vec.setflags(write=False)
            self._audio[str(context_id)] = vec

    def embed_text(self, text: str) -> np.ndarray:
        counts = np.zeros(self.dim, dtype=np.float64)
        for word in normalize_text(text).split():
            idx = self._index.get(word)
            if idx is not None:
                counts[idx] += 1.0
        norm = math.sqrt(math.fsum(counts * counts))
        if norm == 0.0:
            return counts
        return counts / norm

    def embed_audio(self, context_id: str) -> np.ndarray:
        try:
            return self._audio[context_id]
        except KeyError:
            raise MissingEmbeddingError(
                f"no audio embedding stored for context {context_id!r}"
            ) from None


def load_embedding_store(path: str) -> FileEmbeddingStore:
    """Load a :class:`FileEmbeddingStore` from its text format.

    Format (UTF-8, ``#`` starts a comment line)::

        dim <n>
        text <n floats space-separated> | <raw text>
        audio <context_id> <n floats>

    Text keys are stored after :func:`normalize_text`; duplicate keys are
    rejected.
    """
    dim: int | None = None
    text_map: dict[str, np.ndarray] = {}
    audio_map: dict[str, np.ndarray] = {}

    def parse_floats(parts: Sequence[str], line_no: int) -> np.ndarray:
        assert dim is not None
        if len(parts) != dim:
            raise FormatError(f"expected {dim} floats, got {len(parts)}", path=path, line=line_no)
        try:
            return np.array([float(p) for p in parts], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"bad float: {exc}", path=path, line=line_no) from None

    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            kind = parts[0]
            if kind == "dim":
                if dim is not None:
                    raise FormatError("duplicate dim header", path=path, line=line_no)
                try:
                    dim = int(parts[1])
                except (IndexError, ValueError):
                    raise FormatError("dim header must be 'dim <n>'", path=path, line=line_no) from None
                if dim <= 0:
                    raise FormatError(f"dim must be positive, got {dim}", path=path, line=line_no)
            elif kind == "text":
                if dim is None:
                    raise FormatError("text entry before dim header", path=path, line=line_no)
                body = line[len("text") :].strip()
                if "|" not in body:
                    raise FormatError("text entry needs '<floats> | <raw text>'", path=path, line=line_no)
                floats_part, _, raw_text = body.partition("|")
                vec = parse_floats(floats_part.split(), line_no)
                key = normalize_text(raw_text)
                if not key:
                    raise FormatError("text entry has an empty key", path=path, line=line_no)
                if key in text_map:
                    raise FormatError(f"duplicate text key {key!r}", path=path, line=line_no)
                text_map[key] = vec
            elif kind == "audio":
                if dim is None:
                    raise FormatError("audio entry before dim header", path=path, line=line_no)
                if len(parts) < 2:
                    raise FormatError("audio entry needs '<context_id> <floats>'", path=path, line=line_no)
                context_id = parts[1]
                vec = parse_floats(parts[2:], line_no)
                if context_id in audio_map:
                    raise FormatError(f"duplicate audio key {context_id!r}", path=path, line=line_no)
                audio_map[context_id] = vec
            else:
                raise FormatError(f"unknown directive {kind!r}", path=path, line=line_no)

    if dim is None:
        raise FormatError("missing 'dim' header", path=path)
    return FileEmbeddingStore(dim=dim, text_map=text_map, audio_map=audio_map)
