"""Turbo message-passing engines for linear observation models.

One iteration alternates a fast LMMSE update against the measurements
(module A, exploiting row orthogonality of the operator) with an MMSE
denoiser under an AWGN model (module B), exchanging extrinsic Gaussian
messages.  Damping forms convex combinations of consecutive extrinsic
messages on both handoffs to stabilize low-sampling-ratio runs.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .denoisers import DenoiserOutput, clamp_variance, tweedie_denoiser
from .operators import LinearModel, adjoint, forward
from .priors import Prior, second_moment

__all__ = [
    "Message",
    "StmpConfig",
    "RunTrace",
    "ExtrinsicError",
    "LMMSE_VARIANCE_FLOOR",
    "lmmse_update",
    "extrinsic",
    "damp",
    "run_tmp",
    "run_stmp",
]

# Keeps the extrinsic precision subtraction finite in the fully sampled
# noiseless corner, where the LMMSE posterior variance hits zero.
LMMSE_VARIANCE_FLOOR = 1e-12


class ExtrinsicError(RuntimeError):
    """Posterior variance failed to drop below the prior variance."""


@dataclass(frozen=True)
class Message:
    """Gaussian belief: mean vector with a shared scalar variance."""

    mean: np.ndarray
    variance: float

    def __post_init__(self):
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"message variance must be finite and positive, got {self.variance}")
        if not np.all(np.isfinite(self.mean)):
            raise ValueError("message mean contains non-finite entries")


@dataclass
class StmpConfig:
    """Run settings shared by the TMP/STMP/Q-STMP engines.

    ``init_mean``/``init_variance`` default to a zero vector and the
    prior second moment E[x^2] (required explicitly when no prior is
    available to derive it from).  ``inner_iters`` is only read by the
    quantized engine: denoiser/LMMSE sweeps per dequantization.
    """

    max_iters: int = 50
    rel_change_tol: float = 1e-6
    damping: float = 1.0
    init_mean: np.ndarray | None = None
    init_variance: float | None = None
    record_trace: bool = True
    inner_iters: int = 1

    def __post_init__(self):
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_change_tol < 0:
            raise ValueError("rel_change_tol must be >= 0")
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")


@dataclass
class RunTrace:
    """Per-iteration variance and error records of one engine run."""

    v_a_pri: list = field(default_factory=list)
    v_a_post: list = field(default_factory=list)
    v_b_pri: list = field(default_factory=list)
    v_b_post: list = field(default_factory=list)
    nmse: list = field(default_factory=list)
    # quantized runs additionally log the dequantizer variances
    v_c_pri: list = field(default_factory=list)
    v_c_post: list = field(default_factory=list)
    v_c_ext: list = field(default_factory=list)
    # full messages, kept when record_trace is set (desk scale only)
    messages: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    def to_rows(self, se_mse: list | None = None) -> list[dict]:
        rows = []
        for i in range(self.iterations):
            rows.append(
                {
                    "iter": i,
                    "v_A_pri": self.v_a_pri[i],
                    "v_B_pri": self.v_b_pri[i],
                    "v_B_post": self.v_b_post[i],
                    "nmse": self.nmse[i] if self.nmse else "",
                    "se_mse": se_mse[i] if se_mse is not None and i < len(se_mse) else "",
                }
            )
        return rows

    def to_csv(self, se_mse: list | None = None) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(
            buf, fieldnames=["iter", "v_A_pri", "v_B_pri", "v_B_post", "nmse", "se_mse"]
        )
        writer.writeheader()
        for row in self.to_rows(se_mse):
            writer.writerow(row)
        return buf.getvalue()

    def to_dict(self) -> dict:
        d = {
            "v_A_pri": self.v_a_pri,
            "v_A_post": self.v_a_post,
            "v_B_pri": self.v_b_pri,
            "v_B_post": self.v_b_post,
            "nmse": self.nmse,
            "converged": self.converged,
            "iterations": self.iterations,
        }
        if self.v_c_pri:
            d |= {"v_C_pri": self.v_c_pri, "v_C_post": self.v_c_post, "v_C_ext": self.v_c_ext}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def lmmse_update(model: LinearModel, prior_msg: Message) -> Message:
    """LMMSE posterior for y = A x + n under the Gaussian prior message.

    Uses the partial-orthogonal fast path: the gain reduces to a scalar
    and the posterior variance to v - (M/N) v^2 / (v + noise_var).
    """
    op = model.operator
    v = prior_msg.variance
    if prior_msg.mean.shape != (op.n_cols,):
        raise ValueError(
            f"prior mean length {prior_msg.mean.shape} does not match operator columns {op.n_cols}"
        )
    gain = v / (v + model.noise_variance)
    resid = model.observations - forward(op, prior_msg.mean)
    mean = prior_msg.mean + gain * adjoint(op, resid)
    var = v - (op.n_rows / op.n_cols) * v * gain
    return Message(mean=mean, variance=max(var, LMMSE_VARIANCE_FLOOR))


def extrinsic(post: Message, pri: Message) -> Message:
    """Divide the posterior belief by the prior belief (precision subtraction)."""
    if not post.variance < pri.variance:
        raise ExtrinsicError(
            f"posterior variance {post.variance} is not below prior variance {pri.variance}"
        )
    v_ext = 1.0 / (1.0 / post.variance - 1.0 / pri.variance)
    mean = v_ext * (post.mean / post.variance - pri.mean / pri.variance)
    return Message(mean=mean, variance=v_ext)


def damp(beta: float, new: Message, old: Message | None) -> Message:
    """Convex combination of consecutive extrinsic messages."""
    if old is None or beta >= 1.0:
        return new
    return Message(
        mean=beta * new.mean + (1.0 - beta) * old.mean,
        variance=beta * new.variance + (1.0 - beta) * old.variance,
    )


def _nmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    return float(np.sum((estimate - truth) ** 2) / np.sum(truth**2))


class _TurboState:
    """A-side/B-side sweep shared by the plain and quantized engines."""

    def __init__(self, n: int, cfg: StmpConfig, denoiser, ground_truth):
        self.cfg = cfg
        self.denoiser = denoiser
        self.truth = ground_truth
        self.x_a_pri = np.zeros(n) if cfg.init_mean is None else np.asarray(cfg.init_mean, float)
        if cfg.init_variance is None:
            raise ValueError("init_variance is required (no prior to derive it from)")
        self.v_a_pri = float(cfg.init_variance)
        self.ext_a_old: Message | None = None
        self.ext_b_old: Message | None = None
        self.x_b_post_prev: np.ndarray | None = None
        self.last_output: DenoiserOutput | None = None
        self.trace = RunTrace()

    def sweep(self, model: LinearModel) -> None:
        """One module-A + module-B pass against the given (pseudo-)measurements."""
        cfg, tr = self.cfg, self.trace
        pri_a = Message(self.x_a_pri, self.v_a_pri)
        post_a = lmmse_update(model, pri_a)
        ext_a = damp(cfg.damping, extrinsic(post_a, pri_a), self.ext_a_old)
        self.ext_a_old = ext_a

        out = self.denoiser(ext_a.mean, ext_a.variance)
        out = DenoiserOutput(out.mean, clamp_variance(out.variance, ext_a.variance))
        self.last_output = out
        post_b = Message(out.mean, out.variance)
        ext_b = damp(cfg.damping, extrinsic(post_b, ext_a), self.ext_b_old)
        self.ext_b_old = ext_b
        self.x_a_pri, self.v_a_pri = ext_b.mean, ext_b.variance

        tr.v_a_pri.append(pri_a.variance)
        tr.v_a_post.append(post_a.variance)
        tr.v_b_pri.append(ext_a.variance)
        tr.v_b_post.append(out.variance)
        if self.truth is not None:
            tr.nmse.append(_nmse(out.mean, self.truth))
        if cfg.record_trace:
            tr.messages.append(
                {"pri_a": pri_a, "post_a": post_a, "ext_a": ext_a, "post_b": post_b, "ext_b": ext_b}
            )

    def finished(self) -> bool:
        """Relative l2 change of the denoised estimate below tolerance."""
        x = self.last_output.mean
        prev, self.x_b_post_prev = self.x_b_post_prev, x.copy()
        if prev is None:
            return False
        denom = float(np.linalg.norm(prev))
        if denom == 0.0:
            return False
        return float(np.linalg.norm(x - prev)) / denom < self.cfg.rel_change_tol


def run_tmp(
    model: LinearModel,
    denoiser,
    cfg: StmpConfig,
    ground_truth: np.ndarray | None = None,
) -> tuple[DenoiserOutput, RunTrace]:
    """Run the turbo loop with an arbitrary (r, v) -> DenoiserOutput denoiser."""
    state = _TurboState(model.operator.n_cols, cfg, denoiser, ground_truth)
    for t in range(cfg.max_iters):
        state.sweep(model)
        state.trace.iterations = t + 1
        if state.finished():
            state.trace.converged = True
            break
    return state.last_output, state.trace


def run_stmp(
    model: LinearModel,
    prior_or_client,
    cfg: StmpConfig,
    ground_truth: np.ndarray | None = None,
) -> tuple[DenoiserOutput, RunTrace]:
    """Run the turbo loop with the score-based denoiser for a prior or client.

    With an analytic prior, the initial variance defaults to the prior
    second moment E[x^2]; an external client must come with an explicit
    ``init_variance``.
    """
    denoiser, cfg = resolve_denoiser(prior_or_client, cfg)
    return run_tmp(model, denoiser, cfg, ground_truth)


def resolve_denoiser(prior_or_client, cfg: StmpConfig):
    """Dispatch a prior descriptor or callable into (denoiser, config)."""
    if isinstance(prior_or_client, Prior):
        denoiser = tweedie_denoiser(prior_or_client)
        if cfg.init_variance is None:
            from dataclasses import replace

            cfg = replace(cfg, init_variance=second_moment(prior_or_client))
        return denoiser, cfg
    if callable(prior_or_client):
        return prior_or_client, cfg
    raise TypeError(
        f"expected a prior or a denoiser callable, got {type(prior_or_client).__name__}"
    )
