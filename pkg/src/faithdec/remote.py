"""Client for the newline-delimited JSON model-server protocol.

One connection carries an ordered request/response stream; requests are
single-line JSON objects with an "op" field, responses echo {"ok": true}
plus an op-specific payload or {"ok": false, "error": code, "message"}.
:class:`RemoteModel` serves both as an LM backend (open_session /
next_logprobs) and as an embedding provider (embed_text / embed_audio).
Requests on one connection are serialized; open several RemoteModel
instances for concurrency.
"""

from __future__ import annotations

import json
import socket
import threading
from typing import Sequence

import numpy as np

from .core import TokenId, VocabInfo
from .errors import BackendUnavailableError, ProtocolError
from .lm import check_prefix

__all__ = ["RemoteModel", "RemoteSession", "encode_message", "decode_message"]


def encode_message(obj: dict) -> bytes:
    """Canonical wire form: compact JSON, sorted keys, one trailing newline."""
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def decode_message(line: bytes) -> dict:
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed response line: {exc}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("response is not a JSON object")
    return obj


class RemoteModel:
    """TCP client for a model server speaking the NDJSON protocol."""

    def __init__(self, host: str, port: int, *, timeout_s: float = 60.0):
        self.address = (host, int(port))
        self._lock = threading.Lock()
        try:
            self._sock = socket.create_connection(self.address, timeout=timeout_s)
        except OSError as exc:
            raise BackendUnavailableError(
                f"cannot reach model server at {host}:{port}: {exc}"
            ) from exc
        self._reader = self._sock.makefile("rb")
        self._embed_dim: int | None = None

    @classmethod
    def from_spec(cls, spec: str, **kwargs) -> "RemoteModel":
        """Parse "host:port" into a connected client."""
        host, _, port = spec.rpartition(":")
        if not host or not port.isdigit():
            raise ProtocolError(f"remote address must be host:port, got {spec!r}")
        return cls(host, int(port), **kwargs)

    def close(self) -> None:
        with self._lock:
            try:
                self._reader.close()
            finally:
                self._sock.close()

    def __enter__(self) -> "RemoteModel":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def request(self, message: dict) -> dict:
        """Send one request and wait for its response (serialized per client)."""
        payload = encode_message(message)
        with self._lock:
            try:
                self._sock.sendall(payload)
                line = self._reader.readline()
            except OSError as exc:
                raise BackendUnavailableError(f"model server connection failed: {exc}") from exc
        if not line:
            raise BackendUnavailableError("model server closed the connection")
        response = decode_message(line)
        if not response.get("ok"):
            raise ProtocolError(
                str(response.get("message", "server error")),
                code=response.get("error"),
            )
        return response

    # -- LmBackend surface ---------------------------------------------------

    def open_session(self, context_id: str) -> "RemoteSession":
        response = self.request({"op": "open_session", "context_id": str(context_id)})
        try:
            vocab = VocabInfo(
                vocab_size=int(response["vocab_size"]),
                bos_id=int(response["bos_id"]),
                eos_id=int(response["eos_id"]),
                token_strings=tuple(str(t) for t in response["tokens"]),
            )
            session_id = str(response["session"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"bad open_session response: {exc}") from None
        if isinstance(response.get("embed_dim"), int):
            self._embed_dim = response["embed_dim"]
        return RemoteSession(
            model=self, session_id=session_id, context_id=str(context_id), vocab=vocab
        )

    # -- EmbeddingProvider surface --------------------------------------------

    @property
    def dim(self) -> int:
        if self._embed_dim is None:
            raise ProtocolError("embedding dim unknown before the first open_session/embed call")
        return self._embed_dim

    def _decode_vector(self, response: dict) -> np.ndarray:
        vector = response.get("vector")
        if not isinstance(vector, list):
            raise ProtocolError('embed response lacks a "vector" list')
        arr = np.asarray(vector, dtype=np.float64)
        if self._embed_dim is None:
            self._embed_dim = int(arr.shape[0])
        elif arr.shape[0] != self._embed_dim:
            raise ProtocolError(
                f"embedding dim changed from {self._embed_dim} to {arr.shape[0]}"
            )
        return arr

    def embed_text(self, text: str) -> np.ndarray:
        return self._decode_vector(self.request({"op": "embed_text", "text": str(text)}))

    def embed_audio(self, context_id: str) -> np.ndarray:
        return self._decode_vector(
            self.request({"op": "embed_audio", "context_id": str(context_id)})
        )


class RemoteSession:
    """A server-side conditioning context bound to one RemoteModel."""

    def __init__(self, model: RemoteModel, session_id: str, context_id: str, vocab: VocabInfo):
        self.model = model
        self.session_id = session_id
        self.context_id = context_id
        self.vocab = vocab

    def next_logprobs(self, prefix: Sequence[TokenId]) -> np.ndarray:
        prefix = check_prefix(self.vocab, prefix)
        response = self.model.request(
            {"op": "logprobs", "session": self.session_id, "prefix": list(prefix)}
        )
        values = response.get("logprobs")
        if not isinstance(values, list) or len(values) != self.vocab.vocab_size:
            raise ProtocolError("logprobs response has the wrong length")
        arr = np.asarray(values, dtype=np.float64)
        # Guard the hypothesis invariant against softmax rounding.
        return np.minimum(arr, 0.0)

    def close(self) -> None:
        self.model.request({"op": "close_session", "session": self.session_id})
