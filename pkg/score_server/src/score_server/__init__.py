"""Reference host for the external denoiser protocol."""

from .analytic import make_denoiser
from .plugins import load_plugin
from .server import ServerConfig, make_tcp_server, serve

__version__ = "0.1.0"

__all__ = ["ServerConfig", "make_denoiser", "load_plugin", "make_tcp_server", "serve"]
