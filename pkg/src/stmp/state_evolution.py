"""Deterministic scalar predictors of the asymptotic per-iteration MSE.

The recursion alternates the linear-stage variance map with the
denoiser MSE function MSE(v) = E[Var(x | x + N(0, v))].  The quantized
variant replaces the linear stage by the dequantizer transfer integral
(a Gaussian expectation of the squared bin-likelihood sensitivity),
evaluated with Gauss-Hermite quadrature.  Fixed points predict the
converged normalized MSE of the empirical runs.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_hermite

from .priors import Prior, posterior_moments, prior_to_dict, sample_prior, second_moment
from .quantizer import QuantizerSpec, truncated_gaussian_stats

__all__ = [
    "MseTable",
    "SETrace",
    "mse_function",
    "build_mse_table",
    "run_se_stmp",
    "theta",
    "run_se_qstmp",
]

SE_REL_TOL = 1e-10
SE_MAX_ITERS_DEFAULT = 1000
_DIVERGENCE_CEIL = 1e18
_V_B_FLOOR = 1e-15


@dataclass
class SETrace:
    """Per-iteration predicted variances and MSE of one recursion run."""

    v_a_pri: list = field(default_factory=list)
    v_b_pri: list = field(default_factory=list)
    predicted_mse: list = field(default_factory=list)
    converged: bool = False
    fixed_point: dict | None = None

    def to_dict(self) -> dict:
        return {
            "v_A_pri": self.v_a_pri,
            "v_B_pri": self.v_b_pri,
            "predicted_mse": self.predicted_mse,
            "converged": self.converged,
            "fixed_point": self.fixed_point,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# ---------------------------------------------------------------------------
# Denoiser MSE function and lookup table


def mse_function(prior: Prior, v: float, nodes: int = 401) -> float:
    """Scalar MMSE of the prior under AWGN of variance v.

    E over the noisy input of the closed-form posterior variance, one
    Gauss-Hermite rule per mixture component of the input marginal.
    """
    if v <= 0:
        raise ValueError("v must be positive")
    from .priors import _smoothed_components

    w, mu, s = _smoothed_components(prior, v)
    t, gw = roots_hermite(nodes)
    gw = gw / np.sqrt(np.pi)
    total = 0.0
    for wk, mk, sk in zip(w, mu, s):
        r = mk + np.sqrt(2.0 * sk) * t
        _, var = posterior_moments(prior, r, v)
        total += wk * float(np.sum(gw * var))
    return total


@dataclass
class MseTable:
    """Log-log interpolated map from prior variance v to MSE(v).

    Queries outside the grid clamp to the boundary (with a warning);
    values are isotonically corrected at build time if the raw sweep is
    not monotone.
    """

    grid: np.ndarray
    values: np.ndarray
    interpolation: str = "log_log_linear"

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or len(g) < 2:
            raise ValueError("grid and values must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(v >= g):
            raise ValueError("MSE values must lie strictly below the noise variance")
        if np.any(np.diff(v) < 0):
            raise ValueError("values must be monotone nondecreasing")

    def __call__(self, v: float) -> float:
        if v < self.grid[0] or v > self.grid[-1]:
            warnings.warn(
                f"MSE table query v={v:.3e} outside grid "
                f"[{self.grid[0]:.3e}, {self.grid[-1]:.3e}]; clamping",
                stacklevel=2,
            )
            v = float(np.clip(v, self.grid[0], self.grid[-1]))
        logm = np.interp(np.log(v), np.log(self.grid), np.log(self.values))
        return float(np.exp(logm))

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "values": self.values.tolist(),
            "interpolation": self.interpolation,
        }

    @staticmethod
    def from_dict(d: dict) -> "MseTable":
        return MseTable(
            grid=np.asarray(d["grid"], dtype=float),
            values=np.asarray(d["values"], dtype=float),
            interpolation=d.get("interpolation", "log_log_linear"),
        )


def _pava_nondecreasing(y: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators projection onto nondecreasing sequences."""
    vals = list(y.astype(float))
    counts = [1] * len(vals)
    out_vals, out_counts = [], []
    for v, c in zip(vals, counts):
        out_vals.append(v)
        out_counts.append(c)
        while len(out_vals) > 1 and out_vals[-2] > out_vals[-1]:
            v2, c2 = out_vals.pop(), out_counts.pop()
            v1, c1 = out_vals.pop(), out_counts.pop()
            out_vals.append((v1 * c1 + v2 * c2) / (c1 + c2))
            out_counts.append(c1 + c2)
    return np.repeat(out_vals, out_counts)


def _mc_mse(denoiser, prior_sampler, v: float, n: int, rng) -> float:
    x = prior_sampler(n, rng)
    r = x + np.sqrt(v) * rng.standard_normal(n)
    out = denoiser(r, v)
    return float(np.mean((out.mean - x) ** 2))


def build_mse_table(
    source,
    v_min: float = 1e-6,
    v_max: float = 1e2,
    points_per_decade: int = 64,
    mc_samples: int = 200_000,
    mc_prior: Prior | None = None,
    seed: int = 0,
) -> MseTable:
    """Sweep MSE(v) over a log grid and wrap it in an interpolant.

    ``source`` is a prior (exact quadrature per grid point) or a
    denoiser callable (Monte-Carlo denoising per grid point, sampling
    signals from ``mc_prior``).  Non-monotone raw values trigger a
    warning and an isotonic correction.
    """
    decades = np.log10(v_max / v_min)
    n = max(2, int(round(decades * points_per_decade)) + 1)
    grid = np.geomspace(v_min, v_max, n)
    if isinstance(source, Prior):
        values = np.array([mse_function(source, v) for v in grid])
    else:
        if mc_prior is None:
            raise ValueError("mc_prior is required when sweeping a denoiser")
        rng = np.random.default_rng(seed)
        sampler = lambda k, r: sample_prior(mc_prior, k, r)
        values = np.array([_mc_mse(source, sampler, v, mc_samples, rng) for v in grid])
    if np.any(np.diff(values) < 0):
        drop = float(np.max(np.maximum(-np.diff(values), 0.0)))
        if drop > 1e-12 * values.max():
            warnings.warn(
                f"raw MSE sweep is non-monotone (max drop {drop:.3e}); applying isotonic correction",
                stacklevel=2,
            )
        values = _pava_nondecreasing(values)
    values = np.minimum(values, grid * (1.0 - 1e-12))
    return MseTable(grid=grid, values=values)


def table_cache_key(prior: Prior) -> str:
    """Stable hash of a prior descriptor, for table cache filenames."""
    blob = json.dumps(prior_to_dict(prior), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _resolve_mse(source):
    if isinstance(source, Prior):
        return lambda v: mse_function(source, v), second_moment(source)
    if isinstance(source, MseTable):
        return source, None
    raise TypeError(f"expected a prior or MseTable, got {type(source).__name__}")


# ---------------------------------------------------------------------------
# Recursions


def run_se_stmp(
    source,
    sampling_ratio: float,
    noise_variance: float,
    max_iters: int = SE_MAX_ITERS_DEFAULT,
    init_variance: float | None = None,
) -> SETrace:
    """Variance recursion of the plain engine.

    ``source`` is a prior or a prebuilt :class:`MseTable`; a table needs
    an explicit ``init_variance``.  Divergence is flagged on the trace,
    never raised.
    """
    if not (0.0 < sampling_ratio <= 1.0):
        raise ValueError("sampling_ratio must lie in (0, 1]")
    mse_of, sm = _resolve_mse(source)
    v_a = float(init_variance if init_variance is not None else sm)
    if v_a is None or v_a <= 0:
        raise ValueError("init_variance is required and must be positive")
    ratio = sampling_ratio
    tr = SETrace()
    for _ in range(max_iters):
        # the fully sampled noiseless corner drives v_B to exactly zero
        v_b = max((v_a + noise_variance) / ratio - v_a, _V_B_FLOOR)
        if not np.isfinite(v_b) or v_b > _DIVERGENCE_CEIL:
            return tr
        mse = min(mse_of(v_b), v_b * (1.0 - 1e-15))
        v_a_next = 1.0 / (1.0 / mse - 1.0 / v_b)
        tr.v_a_pri.append(v_a)
        tr.v_b_pri.append(v_b)
        tr.predicted_mse.append(mse)
        if abs(v_a_next - v_a) < SE_REL_TOL * v_a:
            v_a = v_a_next
            tr.converged = True
            break
        v_a = v_a_next
    if tr.converged:
        v_b = max((v_a + noise_variance) / ratio - v_a, _V_B_FLOOR)
        tr.fixed_point = {"v_A_pri": v_a, "v_B_pri": v_b, "mse": mse_of(v_b)}
    return tr


def theta(
    v_a_pri: float,
    noise_variance: float,
    spec: QuantizerSpec,
    v_z: float,
    nodes: int = 127,
) -> float:
    """Dequantizer transfer integral: the expected squared sensitivity of
    the bin likelihood, summed over the codebook under the Gaussian
    measure of the pseudo-prior mean.

    Accepts 0 < v_a_pri <= v_z; at equality the measure degenerates to a
    point mass at zero (the recursion's starting state).
    """
    if not (0.0 < v_a_pri <= v_z):
        raise ValueError(f"need 0 < v_a_pri <= v_z, got v_a_pri={v_a_pri}, v_z={v_z}")
    s2 = v_a_pri + noise_variance
    s = np.sqrt(s2)
    t, w = roots_hermite(nodes)
    z = np.sqrt(2.0) * t * np.sqrt(max(v_z - v_a_pri, 0.0))
    w = w / np.sqrt(np.pi)
    thresholds = spec.thresholds  # (n_bins + 1,)
    eta = (thresholds[None, :] - z[:, None]) / s  # (nodes, n_bins + 1)
    mu, _, log_mass = truncated_gaussian_stats(eta[:, :-1], eta[:, 1:])
    # (Psi' )^2 / Psi = mu^2 * mass / s^2 in the standardized scale
    integrand = np.sum(mu * mu * np.exp(log_mass), axis=1) / s2
    val = float(np.sum(w * integrand))
    if not np.isfinite(val):
        raise FloatingPointError("transfer integral did not evaluate to a finite value")
    return val


def run_se_qstmp(
    source,
    sampling_ratio: float,
    noise_variance: float,
    spec: QuantizerSpec,
    max_iters: int = SE_MAX_ITERS_DEFAULT,
    init_variance: float | None = None,
    v_z: float | None = None,
) -> SETrace:
    """Variance recursion of the quantized engine.

    v_z defaults to the prior second moment (rows of the operator have
    unit norm, so measurements inherit E[x^2]).
    """
    if not (0.0 < sampling_ratio <= 1.0):
        raise ValueError("sampling_ratio must lie in (0, 1]")
    mse_of, sm = _resolve_mse(source)
    v_a = float(init_variance if init_variance is not None else sm)
    if v_z is None:
        if sm is None:
            raise ValueError("v_z is required when no prior is available to derive it from")
        v_z = sm
    v_a = min(v_a, v_z)
    ratio = sampling_ratio
    tr = SETrace()
    for _ in range(max_iters):
        th = theta(v_a, noise_variance, spec, v_z)
        if th <= 0:
            return tr
        v_b = max((1.0 / th) / ratio - v_a, _V_B_FLOOR)
        if not np.isfinite(v_b) or v_b > _DIVERGENCE_CEIL:
            return tr
        mse = min(mse_of(v_b), v_b * (1.0 - 1e-15))
        v_a_next = 1.0 / (1.0 / mse - 1.0 / v_b)
        tr.v_a_pri.append(v_a)
        tr.v_b_pri.append(v_b)
        tr.predicted_mse.append(mse)
        if abs(v_a_next - v_a) < SE_REL_TOL * v_a:
            v_a = v_a_next
            tr.converged = True
            break
        v_a = min(v_a_next, v_z)
    if tr.converged:
        th = theta(min(v_a, v_z), noise_variance, spec, v_z)
        v_b = max((1.0 / th) / ratio - v_a, _V_B_FLOOR)
        tr.fixed_point = {"v_A_pri": v_a, "v_B_pri": v_b, "mse": mse_of(v_b)}
    return tr
