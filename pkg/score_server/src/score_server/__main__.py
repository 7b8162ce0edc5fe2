"""Command-line entry point: serve a denoiser over stdio or TCP."""

from __future__ import annotations

import argparse
import json
import sys

from .server import ServerConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="score-server",
        description="Serve an MMSE denoiser over the newline-delimited JSON protocol.",
    )
    transport = parser.add_mutually_exclusive_group()
    transport.add_argument("--stdio", action="store_true", help="serve one session on stdin/stdout (default)")
    transport.add_argument("--tcp", type=int, metavar="PORT", help="listen on 127.0.0.1:PORT")
    backend = parser.add_mutually_exclusive_group(required=True)
    backend.add_argument("--prior", help="analytic prior descriptor as JSON")
    backend.add_argument("--plugin", help="path to a Python file defining denoise(r, v)")
    parser.add_argument("--n", type=int, help="expected vector dimension (handshake is validated)")
    parser.add_argument(
        "--strict",
        action="store_true",
        help="reject outputs whose variance does not shrink below the noise level",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ServerConfig(
            transport="tcp" if args.tcp is not None else "stdio",
            port=args.tcp or 0,
            prior=json.loads(args.prior) if args.prior else None,
            plugin_path=args.plugin,
            dimension=args.n,
            strict_variance=args.strict,
        )
        serve(cfg)
    except (ValueError, FileNotFoundError, AttributeError, json.JSONDecodeError) as exc:
        print(f"score-server: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
