"""Newline-delimited JSON model server for caption decoding clients."""

from .bundles import BundleError, MockBundle, ModelBundle, load_bundle
from .protocol import ConnectionState, encode, handle_line
from .server import make_tcp_server, serve_stdio, serve_tcp

__version__ = "0.1.0"

__all__ = [
    "BundleError",
    "ConnectionState",
    "MockBundle",
    "ModelBundle",
    "encode",
    "handle_line",
    "load_bundle",
    "make_tcp_server",
    "serve_stdio",
    "serve_tcp",
]
