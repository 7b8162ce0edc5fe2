"""MMSE denoisers and alternative posterior-variance estimators.

A denoiser is any callable ``(r, v) -> DenoiserOutput`` mapping a noisy
input with known noise variance to a posterior mean vector and a shared
scalar posterior variance.  The analytic route evaluates the smoothed
score of a prior (posterior mean = r + v * score, variance from the
average log-density curvature); the external route speaks a
newline-delimited JSON protocol to an out-of-process denoiser, so a
learned score model can be served without linking it in.
"""

from __future__ import annotations

import json
import socket
import subprocess
from dataclasses import dataclass

import numpy as np

from .operators import LinearModel, forward
from .priors import Prior, score_first, score_second_trace

__all__ = [
    "DenoiserOutput",
    "DivergenceEstimatorConfig",
    "VARIANCE_FLOOR",
    "VARIANCE_CAP_REL",
    "clamp_variance",
    "denoise_tweedie",
    "tweedie_denoiser",
    "variance_residual",
    "variance_divergence",
    "DenoiserError",
    "TransportError",
    "ProtocolError",
    "DimensionMismatchError",
    "NonFinitePayloadError",
    "ExternalDenoiserClient",
    "denoise_external",
]

# The extrinsic step divides by (1/v_post - 1/v_pri); posterior variance is
# therefore kept strictly inside (0, v_pri).
VARIANCE_FLOOR = 1e-9
VARIANCE_CAP_REL = 0.999


@dataclass(frozen=True)
class DenoiserOutput:
    """Posterior mean vector and shared scalar posterior variance."""

    mean: np.ndarray
    variance: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.mean)):
            raise ValueError("denoiser mean contains non-finite entries")
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"denoiser variance must be finite and positive, got {self.variance}")


@dataclass(frozen=True)
class DivergenceEstimatorConfig:
    """Monte-Carlo Jacobian-trace probe settings.

    ``probe_step=None`` selects the scale-aware default 1e-3 * sqrt(v);
    small fixed steps are prone to numerical instability.  Gaussian
    probes are the default; Rademacher probes have exactly unit squared
    norm per coordinate, so a constant-diagonal Jacobian is recovered
    exactly at any probe count.
    """

    probe_count: int = 16
    probe_step: float | None = None
    seed: int = 0
    probe_kind: str = "gaussian"

    def __post_init__(self):
        if self.probe_count < 1:
            raise ValueError("probe_count must be >= 1")
        if self.probe_step is not None and self.probe_step <= 0:
            raise ValueError("probe_step must be positive")
        if self.probe_kind not in ("gaussian", "rademacher"):
            raise ValueError(f"unknown probe kind {self.probe_kind!r}")


def clamp_variance(raw: float, v_pri: float) -> float:
    """Clamp a posterior variance into [floor, 0.999 * v_pri]."""
    hi = VARIANCE_CAP_REL * v_pri
    lo = min(VARIANCE_FLOOR, hi)
    return float(min(max(raw, lo), hi))


def denoise_tweedie(prior: Prior, r: np.ndarray, v: float) -> DenoiserOutput:
    """Score-based MMSE denoiser for an analytic prior.

    Posterior mean r + v * score; posterior variance v + v^2 * (average
    log-density curvature), clamped away from 0 and v.
    """
    if v <= 0:
        raise ValueError("noise variance must be positive")
    r = np.asarray(r, dtype=float)
    mean = r + v * score_first(prior, r, v)
    raw_var = v + v * v * score_second_trace(prior, r, v)
    return DenoiserOutput(mean=mean, variance=clamp_variance(raw_var, v))


def tweedie_denoiser(prior: Prior):
    """Bind a prior into the generic denoiser callable signature."""

    def denoiser(r: np.ndarray, v: float) -> DenoiserOutput:
        return denoise_tweedie(prior, r, v)

    return denoiser


def variance_residual(model: LinearModel, x_post: np.ndarray) -> float:
    """Residual-based posterior-variance estimate.

    (||y - A x_post||^2 - M * noise_variance) / ||A||_F^2 with
    ||A||_F^2 = M for partial-orthogonal operators.  Assumes the
    denoising error is Gaussian and independent of the measurement
    noise; practical denoisers violate this and the estimate degrades
    accordingly (see tests).  Clamped below at the variance floor.
    """
    resid = model.observations - forward(model.operator, x_post)
    m = model.operator.n_rows
    raw = (float(resid @ resid) - m * model.noise_variance) / m
    return max(raw, VARIANCE_FLOOR)


def variance_divergence(
    denoiser,
    r: np.ndarray,
    v: float,
    cfg: DivergenceEstimatorConfig,
) -> float:
    """Monte-Carlo divergence posterior-variance estimate alpha * v.

    alpha approximates the average Jacobian trace of the denoiser mean
    via K randomized probes, costing K extra denoiser calls.
    """
    if v <= 0:
        raise ValueError("noise variance must be positive")
    r = np.asarray(r, dtype=float)
    n = r.shape[0]
    delta = cfg.probe_step if cfg.probe_step is not None else 1e-3 * np.sqrt(v)
    rng = np.random.default_rng(cfg.seed)
    base = denoiser(r, v).mean
    acc = 0.0
    for _ in range(cfg.probe_count):
        if cfg.probe_kind == "gaussian":
            eps = rng.standard_normal(n)
        else:
            eps = rng.integers(0, 2, size=n) * 2.0 - 1.0
        probed = denoiser(r + delta * eps, v).mean
        acc += float((probed - base) @ eps) / delta
    alpha = acc / (n * cfg.probe_count)
    est = alpha * v
    if not np.isfinite(est):
        raise FloatingPointError(
            f"divergence estimate is not finite (delta={delta:.3e}); "
            "increase the probe step"
        )
    return est


# ---------------------------------------------------------------------------
# External denoiser protocol (newline-delimited JSON over stdio or TCP)


class DenoiserError(Exception):
    """Base class for external-denoiser failures."""


class TransportError(DenoiserError):
    """Byte stream broke: EOF, closed pipe, dead process or socket."""


class ProtocolError(DenoiserError):
    """Peer answered, but not with a valid protocol message."""


class DimensionMismatchError(ProtocolError):
    """Response vector length differs from the handshaken dimension."""


class NonFinitePayloadError(ProtocolError):
    """Response contains NaN/inf values or a non-positive variance."""


class ExternalDenoiserClient:
    """Client side of the external denoiser protocol.

    One request in flight at a time; concurrent runs need separate
    connections.  The handshake pins the vector dimension for the whole
    session.

    Wire format (one JSON object per line):
        client -> {"hello": {"n": N}}          server -> {"ok": true}
        client -> {"id": k, "v": v, "r": [..]} server -> {"id": k, "mean": [..], "variance": w}
    Any {"error": "..."} response aborts the session.
    """

    def __init__(self, reader, writer, n: int, closer=None):
        self._reader = reader
        self._writer = writer
        self._closer = closer
        self.n = int(n)
        self._next_id = 0
        self._handshake()

    @classmethod
    def spawn(cls, argv: list[str], n: int) -> "ExternalDenoiserClient":
        """Launch a denoiser child process and connect over its stdio."""
        proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

        def closer():
            try:
                proc.stdin.close()
            except OSError:
                pass
            proc.wait(timeout=10)

        return cls(proc.stdout, proc.stdin, n, closer)

    @classmethod
    def connect(cls, host: str, port: int, n: int, timeout: float = 30.0) -> "ExternalDenoiserClient":
        """Connect to a TCP denoiser server."""
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        stream = sock.makefile("rw", buffering=1, encoding="utf-8", newline="\n")

        def closer():
            stream.close()
            sock.close()

        return cls(stream, stream, n, closer)

    def close(self):
        if self._closer is not None:
            self._closer()
            self._closer = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _send(self, obj: dict):
        try:
            self._writer.write(json.dumps(obj) + "\n")
            self._writer.flush()
        except (OSError, ValueError, BrokenPipeError) as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def _recv(self) -> dict:
        try:
            line = self._reader.readline()
        except OSError as exc:
            raise TransportError(f"receive failed: {exc}") from exc
        if not line:
            raise TransportError("peer closed the connection")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed JSON from peer: {line[:120]!r}") from exc
        if not isinstance(msg, dict):
            raise ProtocolError(f"expected a JSON object, got {type(msg).__name__}")
        if "error" in msg:
            raise ProtocolError(f"peer reported error: {msg['error']}")
        return msg

    def _handshake(self):
        self._send({"hello": {"n": self.n}})
        msg = self._recv()
        if msg.get("ok") is not True:
            raise ProtocolError(f"handshake rejected: {msg}")

    def denoise(self, r: np.ndarray, v: float) -> DenoiserOutput:
        """One request/response round trip, validated."""
        r = np.asarray(r, dtype=float)
        if r.shape != (self.n,):
            raise DimensionMismatchError(
                f"request length {r.shape} differs from handshaken n={self.n}"
            )
        self._next_id += 1
        req_id = self._next_id
        self._send({"id": req_id, "v": float(v), "r": r.tolist()})
        msg = self._recv()
        if msg.get("id") != req_id:
            raise ProtocolError(f"response id {msg.get('id')} does not match request {req_id}")
        if "mean" not in msg or "variance" not in msg:
            raise ProtocolError(f"response missing fields: {sorted(msg)}")
        mean = np.asarray(msg["mean"], dtype=float)
        if mean.shape != (self.n,):
            raise DimensionMismatchError(
                f"response length {mean.shape} differs from handshaken n={self.n}"
            )
        variance = float(msg["variance"])
        if not (np.all(np.isfinite(mean)) and np.isfinite(variance) and variance > 0):
            raise NonFinitePayloadError("response contains non-finite mean or bad variance")
        return DenoiserOutput(mean=mean, variance=variance)

    def __call__(self, r: np.ndarray, v: float) -> DenoiserOutput:
        return self.denoise(r, v)


def denoise_external(client: ExternalDenoiserClient, r: np.ndarray, v: float) -> DenoiserOutput:
    """Denoise through a connected external-protocol client."""
    return client.denoise(r, v)
