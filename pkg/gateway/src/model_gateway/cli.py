"""Gateway command line."""

from __future__ import annotations

import argparse
import sys

from .adapters import ModelUnavailable
from .config import GatewayConfig, GatewayConfigError
from .server import serve_gateway


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="model-gateway",
        description="Serve the segmentation backend wire protocol from "
                    "recorded fixtures (mock) or live model adapters.")
    parser.add_argument("--config", help="YAML/JSON gateway config file")
    parser.add_argument("--mode", choices=("mock", "live"), default=None)
    parser.add_argument("--fixtures", help="fixture directory (mock mode)")
    parser.add_argument("--bind", help="HOST:PORT (overrides config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            config = GatewayConfig.load(args.config)
        else:
            config = GatewayConfig.from_dict({
                "mode": args.mode or "mock",
                "fixtures": args.fixtures,
            })
        overrides = {}
        if args.mode:
            overrides["mode"] = args.mode
        if args.fixtures:
            overrides["fixtures"] = args.fixtures
        if args.bind:
            host, _, port = args.bind.rpartition(":")
            if not host or not port.isdigit():
                raise GatewayConfigError(f"bind must be HOST:PORT, got {args.bind!r}")
            overrides["host"], overrides["port"] = host, int(port)
        if overrides:
            merged = {**config.__dict__, **overrides}
            config = GatewayConfig.from_dict(merged)
        server = serve_gateway(config)
    except (GatewayConfigError, ModelUnavailable) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"model-gateway ({config.mode}) on {server.url}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())
