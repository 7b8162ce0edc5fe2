"""Session handling for the denoiser wire protocol.

One JSON object per line: a single handshake, then strictly sequential
request/response pairs.  Any malformed or invalid message gets an
``{"error": ...}`` response and ends the session.  Sessions keep no
state beyond the handshaken dimension, so re-sent requests are safe.
"""

from __future__ import annotations

import json
import sys

import numpy as np


class SessionError(Exception):
    """Raised internally to answer with an error object and close."""


def _validated_output(result, n: int, v: float, strict_variance: bool):
    try:
        mean, variance = result
    except (TypeError, ValueError) as exc:
        raise SessionError(f"backend must return (mean, variance): {exc}") from exc
    mean = np.asarray(mean, dtype=float)
    if mean.shape != (n,):
        raise SessionError(f"backend returned length {mean.shape}, expected ({n},)")
    if not np.all(np.isfinite(mean)):
        raise SessionError("backend returned non-finite mean values")
    variance = float(variance)
    if not (np.isfinite(variance) and variance > 0):
        raise SessionError(f"backend returned invalid variance {variance}")
    if variance >= v:
        message = f"backend variance {variance} does not shrink below the noise level {v}"
        if strict_variance:
            raise SessionError(message)
        print(f"score-server: warning: {message}", file=sys.stderr)
    return mean, variance


def serve_session(reader, writer, backend, expected_n: int | None, strict_variance: bool = False):
    """Answer one connection until it closes or a protocol error occurs."""

    def send(obj: dict):
        writer.write(json.dumps(obj) + "\n")
        writer.flush()

    def fail(message: str):
        send({"error": message})

    line = reader.readline()
    if not line:
        return
    try:
        msg = json.loads(line)
    except json.JSONDecodeError:
        fail("handshake is not valid JSON")
        return
    hello = msg.get("hello") if isinstance(msg, dict) else None
    if not isinstance(hello, dict) or not isinstance(hello.get("n"), int) or hello["n"] < 1:
        fail("expected handshake {'hello': {'n': <positive int>}}")
        return
    n = hello["n"]
    if expected_n is not None and n != expected_n:
        fail(f"dimension mismatch: serving n={expected_n}, client asked for n={n}")
        return
    send({"ok": True})

    for line in reader:
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            fail("request is not valid JSON")
            return
        if not isinstance(req, dict) or "id" not in req or "v" not in req or "r" not in req:
            fail("request must carry id, v, and r")
            return
        try:
            v = float(req["v"])
            r = np.asarray(req["r"], dtype=float)
        except (TypeError, ValueError):
            fail("request fields have wrong types")
            return
        if r.shape != (n,):
            fail(f"request vector has length {r.shape}, handshake said {n}")
            return
        if not (np.isfinite(v) and v > 0) or not np.all(np.isfinite(r)):
            fail("request payload must be finite with positive v")
            return
        try:
            mean, variance = _validated_output(backend(r, v), n, v, strict_variance)
        except SessionError as exc:
            fail(str(exc))
            return
        except Exception as exc:  # plugin raised: report, never crash the server
            fail(f"backend failure: {type(exc).__name__}: {exc}")
            return
        send({"id": req["id"], "mean": mean.tolist(), "variance": variance})
