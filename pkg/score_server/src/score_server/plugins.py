"""User plugin loading.

A plugin is a Python file exposing ``denoise(r, v) -> (mean, variance)``:
a pure function from a noisy float vector and noise variance to a
posterior mean vector of the same length and a positive scalar variance.
The server validates every output before relaying it, so a misbehaving
plugin produces a protocol error response, never a malformed reply.
"""

from __future__ import annotations

import importlib.util
import os


def load_plugin(path: str):
    if not os.path.exists(path):
        raise FileNotFoundError(f"plugin file not found: {path}")
    spec = importlib.util.spec_from_file_location("score_server_plugin", path)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    fn = getattr(module, "denoise", None)
    if not callable(fn):
        raise AttributeError(f"plugin {path} does not define a callable denoise(r, v)")
    return fn
