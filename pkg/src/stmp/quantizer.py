"""Mid-rise quantization, the truncated-Gaussian MMSE dequantizer, and the
quantized turbo engine.

Measurements y = Q(Ax + n) keep only the interval each noisy measurement
fell in.  Module C turns bins back into pseudo-measurements: a
component-wise MMSE estimate of z = Ax under the interval likelihood and
a Gaussian pseudo-prior, whose extrinsic output feeds the plain turbo
loop as effective linear measurements with effective noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .denoisers import DenoiserOutput
from .msgpass import Message, RunTrace, StmpConfig, _TurboState, extrinsic, resolve_denoiser
from .operators import LinearModel, MeasurementOperator, forward

__all__ = [
    "QuantizerSpec",
    "QuantizedModel",
    "uniform_interval",
    "quantize",
    "truncated_gaussian_stats",
    "dequantize_mmse",
    "sample_quantized_model",
    "run_qstmp",
]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

# Effective noise floor for the pseudo-measurements handed to module A;
# v_C_ext multiplies denominators exactly like a noise variance would.
V_C_EXT_FLOOR = 1e-12
_NARROW_BIN_WIDTH = 1e-3


@dataclass(frozen=True)
class QuantizerSpec:
    """Uniform mid-rise scalar quantizer with 2^bits intervals.

    Interior thresholds sit at (b - 2^(bits-1)) * interval; the two
    outermost intervals are unbounded.  Output levels are bin midpoints,
    with the unbounded bins clamped to +-(2^(bits-1) - 1/2) * interval
    (the midpoint formula would be infinite there).
    """

    bits: int
    interval: float

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("bits must be >= 1")
        if self.interval <= 0:
            raise ValueError("interval must be positive")

    @property
    def n_bins(self) -> int:
        return 2**self.bits

    def threshold(self, index) -> np.ndarray:
        """Decision threshold r_index for index in [0, 2^bits]; r_0/r_max are -+inf."""
        index = np.asarray(index)
        half = 2 ** (self.bits - 1)
        r = (index - half) * self.interval
        r = np.where(index <= 0, -np.inf, r)
        r = np.where(index >= self.n_bins, np.inf, r)
        return r

    def level(self, bins) -> np.ndarray:
        """Codebook value for 1-based bin indices, outer bins clamped."""
        bins = np.asarray(bins)
        half = 2 ** (self.bits - 1)
        lev = (bins - half - 0.5) * self.interval
        edge = (half - 0.5) * self.interval
        return np.clip(lev, -edge, edge)

    @property
    def thresholds(self) -> np.ndarray:
        """All 2^bits + 1 thresholds. Materializes; intended for small bit depths."""
        return self.threshold(np.arange(self.n_bins + 1))

    @property
    def levels(self) -> np.ndarray:
        """Full output codebook. Materializes; intended for small bit depths."""
        return self.level(np.arange(1, self.n_bins + 1))

    def to_dict(self) -> dict:
        return {"bits": self.bits, "interval": self.interval}

    @staticmethod
    def from_dict(d: dict) -> "QuantizerSpec":
        return QuantizerSpec(bits=int(d["bits"]), interval=float(d["interval"]))


def uniform_interval(bits: int, half_range: float) -> float:
    """Interval such that the finite thresholds span +-half_range."""
    return 2.0 * half_range / 2**bits


@dataclass(frozen=True)
class QuantizedModel:
    """Quantized observations: operator, per-measurement bin, and noise level.

    Bins are the canonical stored form; levels are derivable from the
    spec and carry no extra information.
    """

    operator: MeasurementOperator
    bin_indices: np.ndarray
    spec: QuantizerSpec
    noise_variance: float

    def __post_init__(self):
        b = np.asarray(self.bin_indices)
        if b.shape != (self.operator.n_rows,):
            raise ValueError("bin_indices length must equal operator rows")
        if b.min() < 1 or b.max() > self.spec.n_bins:
            raise ValueError(f"bin indices must lie in [1, {self.spec.n_bins}]")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")


def quantize(spec: QuantizerSpec, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map values to (levels, 1-based bin indices), intervals open-left/closed-right."""
    u = np.asarray(u, dtype=float)
    half = 2 ** (spec.bits - 1)
    bins = np.ceil(u / spec.interval + half).astype(np.int64)
    bins = np.clip(bins, 1, spec.n_bins)
    return spec.level(bins), bins


def truncated_gaussian_stats(a: np.ndarray, b: np.ndarray):
    """Moment ingredients of the standard normal truncated to (a, b].

    Returns ``(mu, bracket, log_mass)`` with ``mu`` the truncated mean
    (phi(a) - phi(b)) / Z, ``bracket`` the variance deficit
    1 - Var[x | x in (a,b)] = (b phi(b) - a phi(a)) / Z + mu^2, and
    ``log_mass`` = log(Phi(b) - Phi(a)).  Stable in the far tails via
    log-domain complementary CDFs, and for narrow bins via a midpoint
    expansion; never raises on vanishing mass.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mu = np.zeros_like(a)
    bracket = np.zeros_like(a)
    log_mass = np.zeros_like(a)

    width = b - a
    narrow = np.isfinite(width) & (width < _NARROW_BIN_WIDTH)
    right = ~narrow & (a >= 0)
    left = ~narrow & (b <= 0)
    middle = ~(narrow | right | left)

    if np.any(narrow):
        c = 0.5 * (a[narrow] + b[narrow])
        h2 = (0.5 * width[narrow]) ** 2
        corr = 1.0 - h2 / 3.0
        mu[narrow] = c * corr
        bracket[narrow] = 1.0 - h2 / 3.0 + h2 * h2 * (3.0 * c * c + 2.0) / 45.0
        log_mass[narrow] = (
            np.log(width[narrow])
            - 0.5 * c * c
            - _LOG_SQRT_2PI
            + np.log1p((c * c - 1.0) * h2 / 6.0)
        )

    def tail(lo, hi):
        # both bounds >= 0; hi may be +inf.  Work with the upper tail in logs.
        log_q_lo = log_ndtr(-lo)
        log_q_hi = np.where(np.isinf(hi), -np.inf, log_ndtr(-np.where(np.isinf(hi), 0.0, hi)))
        lm = log_q_lo + np.log(-np.expm1(log_q_hi - log_q_lo))
        log_phi_lo = -0.5 * lo * lo - _LOG_SQRT_2PI
        e_lo = np.exp(log_phi_lo - lm)
        hi_f = np.where(np.isinf(hi), 0.0, hi)
        log_phi_hi = np.where(np.isinf(hi), -np.inf, -0.5 * hi_f * hi_f - _LOG_SQRT_2PI)
        e_hi = np.exp(log_phi_hi - lm)
        m = e_lo - e_hi
        br = hi_f * e_hi - lo * e_lo + m * m
        return m, br, lm

    if np.any(right):
        m, br, lm = tail(a[right], b[right])
        mu[right], bracket[right], log_mass[right] = m, br, lm
    if np.any(left):
        # reflect x -> -x: mean flips sign, bracket and mass are invariant
        m, br, lm = tail(-b[left], -a[left])
        mu[left], bracket[left], log_mass[left] = -m, br, lm
    if np.any(middle):
        am, bm = a[middle], b[middle]
        z = ndtr(bm) - ndtr(am)
        phi_a = np.exp(-0.5 * am * am) / np.sqrt(2.0 * np.pi)
        phi_b = np.where(np.isinf(bm), 0.0, np.exp(-0.5 * np.where(np.isinf(bm), 0.0, bm) ** 2))
        phi_b = phi_b / np.sqrt(2.0 * np.pi)
        phi_a = np.where(np.isinf(am), 0.0, phi_a)
        m = (phi_a - phi_b) / z
        a_f = np.where(np.isinf(am), 0.0, am)
        b_f = np.where(np.isinf(bm), 0.0, bm)
        br = (b_f * phi_b - a_f * phi_a) / z + m * m
        mu[middle], bracket[middle], log_mass[middle] = m, br, np.log(z)

    return mu, bracket, log_mass


def dequantize_mmse(qm: QuantizedModel, z_pri: Message) -> Message:
    """Component-wise MMSE estimate of z given its bin, with averaged variance.

    The posterior of each z_m under the interval likelihood and the
    Gaussian pseudo-prior has truncated-Gaussian moments in the
    standardized joint scale sqrt(v_pri + noise_var).
    """
    spec = qm.spec
    v = z_pri.variance
    s2 = v + qm.noise_variance
    s = np.sqrt(s2)
    bins = np.asarray(qm.bin_indices)
    eta_l = (spec.threshold(bins - 1) - z_pri.mean) / s
    eta_u = (spec.threshold(bins) - z_pri.mean) / s
    mu, bracket, _ = truncated_gaussian_stats(eta_l, eta_u)
    mean = z_pri.mean + (v / s) * mu
    var = v - (v * v / s2) * bracket
    return Message(mean=mean, variance=float(np.mean(var)))


def sample_quantized_model(
    op: MeasurementOperator,
    x_true: np.ndarray,
    spec: QuantizerSpec,
    noise_variance: float,
    seed: int,
) -> QuantizedModel:
    """Draw y = Q(A x_true + n) and keep the bins."""
    if noise_variance < 0:
        raise ValueError("noise_variance must be >= 0")
    u = forward(op, x_true)
    if noise_variance > 0:
        rng = np.random.default_rng(seed)
        u = u + np.sqrt(noise_variance) * rng.standard_normal(op.n_rows)
    _, bins = quantize(spec, u)
    return QuantizedModel(
        operator=op, bin_indices=bins, spec=spec, noise_variance=float(noise_variance)
    )


def run_qstmp(
    qm: QuantizedModel,
    prior_or_client,
    cfg: StmpConfig,
    ground_truth: np.ndarray | None = None,
) -> tuple[DenoiserOutput, RunTrace]:
    """Quantized turbo loop: dequantize, then inner denoiser/LMMSE sweeps.

    Each outer iteration runs module C once and ``cfg.inner_iters``
    passes of the plain engine against the pseudo-measurements
    (z_C_ext, v_C_ext); the refined signal belief then rebuilds the
    dequantizer prior as z_C_pri = A x_A_pri, v_C_pri = v_A_pri.
    """
    denoiser, cfg = resolve_denoiser(prior_or_client, cfg)
    op = qm.operator
    state = _TurboState(op.n_cols, cfg, denoiser, ground_truth)
    z_c_pri = forward(op, state.x_a_pri)
    v_c_pri = state.v_a_pri
    tr = state.trace

    for _ in range(cfg.max_iters):
        post = dequantize_mmse(qm, Message(z_c_pri, v_c_pri))
        # cap keeps the precision subtraction finite for uninformative bins
        v_post = min(post.variance, (1.0 - 1e-12) * v_c_pri)
        ext = extrinsic(Message(post.mean, v_post), Message(z_c_pri, v_c_pri))
        v_c_ext = max(ext.variance, V_C_EXT_FLOOR)
        tr.v_c_pri.append(v_c_pri)
        tr.v_c_post.append(v_post)
        tr.v_c_ext.append(v_c_ext)

        pseudo = LinearModel(operator=op, observations=ext.mean, noise_variance=v_c_ext)
        for _ in range(cfg.inner_iters):
            state.sweep(pseudo)
        tr.iterations = len(tr.v_b_post)
        z_c_pri = forward(op, state.x_a_pri)
        v_c_pri = state.v_a_pri
        if state.finished():
            tr.converged = True
            break
    return state.last_output, tr
