"""Protocol core: one request line in, one response line out.

Requests are single-line UTF-8 JSON objects carrying "op" in
{open_session, logprobs, embed_text, embed_audio, close_session};
responses carry {"ok": true, ...} or {"ok": false, "error": code,
"message": str}. Responses preserve request order per connection; sessions
are connection-scoped. Serialization is canonical (sorted keys, compact
separators) so recorded transcripts replay byte-identically.
"""

from __future__ import annotations

import json
from typing import Sequence

from .bundles import BundleError, ModelBundle

__all__ = ["ConnectionState", "encode", "handle_line"]

OPS = ("open_session", "logprobs", "embed_text", "embed_audio", "close_session")


def encode(obj: dict) -> bytes:
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def _error(code: str, message: str) -> bytes:
    return encode({"ok": False, "error": code, "message": message})


class ConnectionState:
    """Sessions opened over one connection."""

    def __init__(self, bundle: ModelBundle):
        self.bundle = bundle
        self.sessions: dict[str, str] = {}  # session id -> context id
        self._counter = 0

    def new_session(self, context_id: str) -> str:
        self._counter += 1
        session_id = f"s{self._counter}"
        self.sessions[session_id] = context_id
        return session_id


def _check_prefix(bundle: ModelBundle, prefix: Sequence) -> tuple[int, ...] | None:
    if not isinstance(prefix, list) or not all(isinstance(t, int) for t in prefix):
        return None
    ids = tuple(prefix)
    if not ids or ids[0] != bundle.bos_id or bundle.eos_id in ids:
        return None
    if any(t < 0 or t >= bundle.vocab_size for t in ids):
        return None
    return ids


def handle_line(state: ConnectionState, raw: bytes) -> bytes:
    """Answer one request line; never raises."""
    try:
        request = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        return _error("bad_request", "line is not valid JSON")
    if not isinstance(request, dict):
        return _error("bad_request", "request must be a JSON object")
    op = request.get("op")
    if op not in OPS:
        return _error("bad_request", f"unknown op {op!r}")
    bundle = state.bundle

    if op == "open_session":
        context_id = request.get("context_id")
        if not isinstance(context_id, str):
            return _error("bad_request", "open_session needs a string context_id")
        session_id = state.new_session(context_id)
        return encode(
            {
                "ok": True,
                "session": session_id,
                "vocab_size": bundle.vocab_size,
                "bos_id": bundle.bos_id,
                "eos_id": bundle.eos_id,
                "tokens": list(bundle.tokens),
                "embed_dim": bundle.embed_dim,
            }
        )

    if op == "logprobs":
        session_id = request.get("session")
        if session_id not in state.sessions:
            return _error("no_session", f"unknown session {session_id!r}")
        prefix = _check_prefix(bundle, request.get("prefix"))
        if prefix is None:
            return _error(
                "bad_request",
                "prefix must be a list of valid token ids starting with BOS, no EOS",
            )
        try:
            values = bundle.logprobs(state.sessions[session_id], prefix)
        except BundleError as exc:
            return _error("backend_error", str(exc))
        return encode({"ok": True, "logprobs": [float(v) for v in values]})

    if op == "embed_text":
        text = request.get("text")
        if not isinstance(text, str):
            return _error("bad_request", "embed_text needs a string text")
        try:
            vector = bundle.embed_text(text)
        except BundleError as exc:
            return _error("backend_error", str(exc))
        return encode({"ok": True, "vector": [float(v) for v in vector]})

    if op == "embed_audio":
        context_id = request.get("context_id")
        if not isinstance(context_id, str):
            return _error("bad_request", "embed_audio needs a string context_id")
        try:
            vector = bundle.embed_audio(context_id)
        except BundleError as exc:
            return _error("backend_error", str(exc))
        return encode({"ok": True, "vector": [float(v) for v in vector]})

    # close_session
    session_id = request.get("session")
    if session_id not in state.sessions:
        return _error("no_session", f"unknown session {session_id!r}")
    del state.sessions[session_id]
    return encode({"ok": True})
