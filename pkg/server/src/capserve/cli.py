"""capserve entry point: load a bundle, listen on TCP or stdio.

Config file (JSON) keys: listen ("host:port" or "stdio"), mode
("mock" | "custom"), lm, embeddings (mock paths), factory, factory_args,
manifest (custom checkpoints). Flags override the file; --mock forces the
scripted tabular bundle.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .bundles import BundleError, load_bundle
from .server import serve_stdio, serve_tcp


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise BundleError(f"{path}: config must be a JSON object")
    return config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="capserve",
        description="Serve captioner log-probabilities and embeddings over newline-delimited JSON.",
    )
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--listen", help='"host:port" for TCP or "stdio"')
    parser.add_argument("--mock", action="store_true", help="serve the scripted tabular bundle")
    parser.add_argument("--lm", help="tabular model file (mock mode)")
    parser.add_argument("--embeddings", help="embedding store file (mock mode)")
    parser.add_argument("--manifest", help="context id -> audio path manifest (custom mode)")
    args = parser.parse_args(argv)

    logging.basicConfig(level=os.environ.get("CAPSERVE_LOG", "INFO").upper())

    try:
        config = _load_config(args.config)
        if args.mock:
            config["mode"] = "mock"
        for key in ("listen", "lm", "embeddings", "manifest"):
            value = getattr(args, key)
            if value is not None:
                config[key] = value
        bundle = load_bundle(config)
        listen = str(config.get("listen", "stdio"))
        if listen == "stdio":
            serve_stdio(bundle)
            return 0
        host, _, port = listen.rpartition(":")
        if not host or not port.isdigit():
            raise BundleError(f'listen must be "host:port" or "stdio", got {listen!r}')
        serve_tcp(host, int(port), bundle)
        return 0
    except (BundleError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 0


if __name__ == "__main__":
    sys.exit(main())
