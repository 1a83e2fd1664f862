"""Model bundles the server can wrap.

A bundle owns one captioning model plus one shared-space embedder and
answers everything the protocol needs: next-token log-probabilities per
(context, prefix), text/audio embeddings, and the vocabulary advertised at
open_session. ``MockBundle`` is a scripted tabular model driven by the same
text file formats the decoding toolkit documents, which makes transcript
tests and end-to-end runs fully deterministic. Real checkpoints plug in
through ``mode: custom`` with a factory entry point, since every trained
captioner/embedder pairing has its own loading code.
"""

from __future__ import annotations

import importlib
import math
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

__all__ = ["BundleError", "ModelBundle", "MockBundle", "load_bundle", "LOG_FLOOR"]

# Zero probabilities serialize as this finite log so the wire stays strict
# JSON; exp(LOG_FLOOR) underflows to exactly 0.0 in float64.
LOG_FLOOR = -9999.0

PROB_SUM_TOL = 1e-9


class BundleError(Exception):
    """The model failed to answer; maps to the protocol's backend_error."""


class ModelBundle(Protocol):
    vocab_size: int
    bos_id: int
    eos_id: int
    tokens: tuple[str, ...]
    embed_dim: int

    def logprobs(self, context_id: str, prefix: Sequence[int]) -> list[float]: ...

    def embed_text(self, text: str) -> list[float]: ...

    def embed_audio(self, context_id: str) -> list[float]: ...


def _normalize(text: str) -> str:
    # store keys are lowercased with collapsed whitespace
    return " ".join(text.split()).lower()


def _log_row(probs: Sequence[float]) -> list[float]:
    return [math.log(p) if p > 0.0 else LOG_FLOOR for p in probs]


@dataclass
class MockBundle:
    """Deterministic tabular model plus a file-backed embedding table."""

    vocab_size: int
    bos_id: int
    eos_id: int
    tokens: tuple[str, ...]
    embed_dim: int
    table: Mapping[tuple[str, tuple[int, ...]], list[float]]
    fallback: list[float]
    text_vectors: Mapping[str, list[float]]
    audio_vectors: Mapping[str, list[float]]

    @classmethod
    def load(cls, lm_path: str, embeddings_path: str) -> "MockBundle":
        vocab_size, bos_id, eos_id, tokens, table, fallback = _parse_tabular(lm_path)
        embed_dim, text_vectors, audio_vectors = _parse_store(embeddings_path)
        return cls(
            vocab_size=vocab_size,
            bos_id=bos_id,
            eos_id=eos_id,
            tokens=tokens,
            embed_dim=embed_dim,
            table=table,
            fallback=fallback,
            text_vectors=text_vectors,
            audio_vectors=audio_vectors,
        )

    def logprobs(self, context_id: str, prefix: Sequence[int]) -> list[float]:
        probs = self.table.get((context_id, tuple(prefix)), self.fallback)
        return _log_row(probs)

    def embed_text(self, text: str) -> list[float]:
        key = _normalize(text)
        try:
            return self.text_vectors[key]
        except KeyError:
            raise BundleError(f"no text embedding for {key!r}") from None

    def embed_audio(self, context_id: str) -> list[float]:
        try:
            return self.audio_vectors[context_id]
        except KeyError:
            raise BundleError(f"no audio embedding for context {context_id!r}") from None


def _parse_tabular(path: str):
    """Parse the tabular-LM text format (header, token, fallback, row lines)."""
    header = None
    tokens: dict[int, str] = {}
    fallback: list[float] | None = None
    table: dict[tuple[str, tuple[int, ...]], list[float]] = {}

    def fail(line_no: int, message: str):
        raise BundleError(f"{path}:{line_no}: {message}")

    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "vocab":
                if len(parts) != 6 or parts[2] != "bos" or parts[4] != "eos":
                    fail(line_no, "bad header")
                header = (int(parts[1]), int(parts[3]), int(parts[5]))
            elif parts[0] == "token":
                if header is None or len(parts) < 3:
                    fail(line_no, "bad token line")
                tokens[int(parts[1])] = " ".join(parts[2:])
            elif parts[0] == "fallback":
                fallback = [float(p) for p in parts[1:]]
            elif parts[0] == "row":
                if header is None:
                    fail(line_no, "row before header")
                suffix = () if parts[2] == "-" else tuple(int(p) for p in parts[2].split(","))
                probs = [float(p) for p in parts[3:]]
                if len(probs) != header[0]:
                    fail(line_no, f"expected {header[0]} probabilities")
                if abs(sum(probs) - 1.0) > PROB_SUM_TOL or min(probs) < 0.0:
                    fail(line_no, "probabilities must be non-negative and sum to 1")
                table[(parts[1], (header[1],) + suffix)] = probs
            else:
                fail(line_no, f"unknown directive {parts[0]!r}")
    if header is None:
        raise BundleError(f"{path}: missing vocab header")
    vocab_size, bos_id, eos_id = header
    missing = [i for i in range(vocab_size) if i not in tokens]
    if missing:
        raise BundleError(f"{path}: missing token lines for ids {missing}")
    if fallback is None:
        fallback = [1.0 / vocab_size] * vocab_size
    if len(fallback) != vocab_size or abs(sum(fallback) - 1.0) > PROB_SUM_TOL:
        raise BundleError(f"{path}: bad fallback distribution")
    return (
        vocab_size,
        bos_id,
        eos_id,
        tuple(tokens[i] for i in range(vocab_size)),
        table,
        fallback,
    )


def _parse_store(path: str):
    """Parse the embedding-store text format (dim, text, audio lines)."""
    dim = None
    text_vectors: dict[str, list[float]] = {}
    audio_vectors: dict[str, list[float]] = {}

    def fail(line_no: int, message: str):
        raise BundleError(f"{path}:{line_no}: {message}")

    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "dim":
                dim = int(parts[1])
            elif parts[0] == "text":
                if dim is None:
                    fail(line_no, "text entry before dim header")
                body = line[len("text") :].strip()
                floats_part, sep, raw_text = body.partition("|")
                if not sep:
                    fail(line_no, "text entry needs '<floats> | <raw text>'")
                vector = [float(p) for p in floats_part.split()]
                if len(vector) != dim:
                    fail(line_no, f"expected {dim} floats")
                text_vectors[_normalize(raw_text)] = vector
            elif parts[0] == "audio":
                if dim is None:
                    fail(line_no, "audio entry before dim header")
                vector = [float(p) for p in parts[2:]]
                if len(vector) != dim:
                    fail(line_no, f"expected {dim} floats")
                audio_vectors[parts[1]] = vector
            else:
                fail(line_no, f"unknown directive {parts[0]!r}")
    if dim is None:
        raise BundleError(f"{path}: missing dim header")
    return dim, text_vectors, audio_vectors


def load_bundle(config: Mapping) -> ModelBundle:
    """Build the bundle the config names.

    ``mode: mock`` wraps the scripted tabular files; ``mode: custom`` calls
    a ``package.module:function`` factory with ``factory_args`` (plus the
    manifest path when given), which is where real checkpoint loaders live.
    """
    mode = config.get("mode", "mock")
    if mode == "mock":
        for key in ("lm", "embeddings"):
            if not config.get(key):
                raise BundleError(f"mock bundle needs the {key!r} path")
        return MockBundle.load(str(config["lm"]), str(config["embeddings"]))
    if mode == "custom":
        target = config.get("factory", "")
        module_name, _, attr = str(target).partition(":")
        if not module_name or not attr:
            raise BundleError("custom bundle needs factory 'package.module:function'")
        try:
            factory = getattr(importlib.import_module(module_name), attr)
        except (ImportError, AttributeError) as exc:
            raise BundleError(f"cannot load factory {target!r}: {exc}") from exc
        kwargs = dict(config.get("factory_args") or {})
        if config.get("manifest"):
            kwargs.setdefault("manifest", config["manifest"])
        return factory(**kwargs)
    raise BundleError(f"unknown bundle mode {mode!r}")
