"""TCP and stdio front ends around the protocol core.

One connection is one ordered request stream handled by a dedicated
thread; multiple connections proceed concurrently against the shared
read-only bundle.
"""

from __future__ import annotations

import logging
import socketserver
import sys
from typing import BinaryIO

from .bundles import ModelBundle
from .protocol import ConnectionState, handle_line

__all__ = ["serve_tcp", "serve_stdio", "make_tcp_server"]

logger = logging.getLogger(__name__)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        state = ConnectionState(self.server.bundle)  # type: ignore[attr-defined]
        peer = self.client_address
        logger.info("connection from %s", peer)
        while True:
            line = self.rfile.readline()
            if not line:
                break
            self.wfile.write(handle_line(state, line))
            self.wfile.flush()
        logger.info("connection from %s closed", peer)


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, bundle: ModelBundle):
        super().__init__(address, _Handler)
        self.bundle = bundle


def make_tcp_server(host: str, port: int, bundle: ModelBundle) -> _Server:
    """Bound but not yet serving; callers drive serve_forever/shutdown."""
    return _Server((host, port), bundle)


def serve_tcp(host: str, port: int, bundle: ModelBundle) -> None:
    with make_tcp_server(host, port, bundle) as server:
        bound = server.server_address
        logger.info("listening on %s:%s", bound[0], bound[1])
        print(f"listening on {bound[0]}:{bound[1]}", flush=True)
        server.serve_forever()


def serve_stdio(bundle: ModelBundle, stdin: BinaryIO | None = None, stdout: BinaryIO | None = None) -> None:
    """One connection over stdin/stdout; ends at EOF."""
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    state = ConnectionState(bundle)
    for line in iter(stdin.readline, b""):
        stdout.write(handle_line(state, line))
        stdout.flush()
