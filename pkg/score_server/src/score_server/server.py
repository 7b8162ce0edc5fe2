"""Server configuration and transports: stdio sessions and a threaded TCP
listener, each connection served strictly sequentially."""

from __future__ import annotations

import socketserver
import sys
from dataclasses import dataclass

from .analytic import make_denoiser
from .plugins import load_plugin
from .protocol import serve_session


@dataclass
class ServerConfig:
    """Transport, backend, and expected dimension of one server instance."""

    transport: str = "stdio"  # "stdio" or "tcp"
    port: int = 0
    prior: dict | None = None
    plugin_path: str | None = None
    dimension: int | None = None
    strict_variance: bool = False

    def __post_init__(self):
        if self.transport not in ("stdio", "tcp"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if (self.prior is None) == (self.plugin_path is None):
            raise ValueError("exactly one backend is required: a prior descriptor or a plugin path")
        if self.transport == "tcp" and not (0 <= self.port <= 65535):
            raise ValueError(f"invalid port {self.port}")

    def backend(self):
        if self.prior is not None:
            return make_denoiser(self.prior)
        return load_plugin(self.plugin_path)


def serve_stdio(cfg: ServerConfig):
    """Answer a single session on stdin/stdout until the peer closes."""
    serve_session(sys.stdin, sys.stdout, cfg.backend(), cfg.dimension, cfg.strict_variance)


class _TextStream:
    """Line-oriented text shim over the binary socket files."""

    def __init__(self, rfile, wfile):
        self._rfile = rfile
        self._wfile = wfile

    def readline(self) -> str:
        return self._rfile.readline().decode("utf-8")

    def __iter__(self):
        return iter(self.readline, "")

    def write(self, text: str):
        self._wfile.write(text.encode("utf-8"))

    def flush(self):
        self._wfile.flush()


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        stream = _TextStream(self.rfile, self.wfile)
        try:
            serve_session(
                stream,
                stream,
                self.server.backend,
                self.server.expected_n,
                self.server.strict_variance,
            )
        except (BrokenPipeError, ConnectionResetError):
            pass


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def make_tcp_server(cfg: ServerConfig) -> _Server:
    """Bind a threaded TCP server; caller drives serve_forever/shutdown."""
    server = _Server(("127.0.0.1", cfg.port), _Handler)
    server.backend = cfg.backend()
    server.expected_n = cfg.dimension
    server.strict_variance = cfg.strict_variance
    return server


def serve(cfg: ServerConfig):
    """Run until shutdown: one stdio session, or a TCP listener forever."""
    if cfg.transport == "stdio":
        serve_stdio(cfg)
    else:
        with make_tcp_server(cfg) as server:
            host, port = server.server_address
            print(f"score-server: listening on {host}:{port}", file=sys.stderr)
            server.serve_forever()
