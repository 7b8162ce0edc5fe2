"""Denoising score-matching objectives and a closed-form linear-feature fitter.

The first-order objective regresses a score model onto the conditional
score of the noising kernel; the second-order (trace-form) objective
regresses the log-density curvature onto a quadratic functional of the
first-order residual.  With linearly parameterized models both losses
are quadratic in the coefficients, so the fits are exact least-squares
solves per noise level.  Fitted models plug into the turbo engine as a
denoiser backend.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .denoisers import DenoiserOutput, clamp_variance
from .priors import Prior, sample_prior

__all__ = [
    "NoiseSchedule",
    "FeatureSpec",
    "LinearScoreModel",
    "dsm_loss_first",
    "dsm_loss_second_trace",
    "unified_loss_first",
    "unified_loss_second",
    "fit_linear_score",
    "fitted_denoiser",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Noise levels and per-level weights of the unified objectives.

    Default weights are the variance-normalizing choice lambda1 = sigma^2,
    lambda2 = sigma^4.
    """

    sigmas: tuple
    weights_first: tuple = None
    weights_second: tuple = None

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=float)
        if np.any(s <= 0):
            raise ValueError("all noise levels must be positive")
        if self.weights_first is None:
            object.__setattr__(self, "weights_first", tuple(s**2))
        if self.weights_second is None:
            object.__setattr__(self, "weights_second", tuple(s**4))
        for w in (self.weights_first, self.weights_second):
            if len(w) != len(s):
                raise ValueError("weights must match the number of noise levels")
            if np.any(np.asarray(w, dtype=float) <= 0):
                raise ValueError("weights must be positive")


@dataclass(frozen=True)
class FeatureSpec:
    """Scalar feature basis: polynomial {1, x, ..., x^degree} or Gaussian
    bumps on a grid of centers (plus a constant)."""

    kind: str = "polynomial"
    degree: int = 1
    centers: tuple = ()
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("polynomial", "radial"):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.kind == "polynomial" and self.degree < 0:
            raise ValueError("degree must be >= 0")
        if self.kind == "radial" and (len(self.centers) == 0 or self.width <= 0):
            raise ValueError("radial features need centers and a positive width")

    @property
    def n_features(self) -> int:
        if self.kind == "polynomial":
            return self.degree + 1
        return len(self.centers) + 1

    def matrix(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "polynomial":
            return np.vander(x, self.degree + 1, increasing=True)
        c = np.asarray(self.centers, dtype=float)
        bumps = np.exp(-((x[:, None] - c[None, :]) ** 2) / (2.0 * self.width**2))
        return np.hstack([np.ones((len(x), 1)), bumps])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "degree": self.degree,
            "centers": list(self.centers),
            "width": self.width,
        }

    @staticmethod
    def from_dict(d: dict) -> "FeatureSpec":
        return FeatureSpec(
            kind=d["kind"],
            degree=d.get("degree", 1),
            centers=tuple(d.get("centers", ())),
            width=d.get("width", 1.0),
        )


@dataclass
class LinearScoreModel:
    """Per-noise-level linear-in-features scalar model.

    Evaluating at an arbitrary variance interpolates the coefficient
    vectors linearly in log variance, clamped at the schedule ends.
    """

    features: FeatureSpec
    sigmas: np.ndarray
    coefficients: np.ndarray  # (n_levels, n_features)
    kind: str = "score"  # "score" or "curvature", documentation only

    def __post_init__(self):
        self.sigmas = np.asarray(self.sigmas, dtype=float)
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (len(self.sigmas), self.features.n_features):
            raise ValueError("coefficient array shape does not match schedule and features")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("coefficients must be finite")
        order = np.argsort(self.sigmas)
        self.sigmas = self.sigmas[order]
        self.coefficients = self.coefficients[order]

    def coeff_at(self, v: float) -> np.ndarray:
        log_levels = 2.0 * np.log(self.sigmas)
        q = float(np.clip(np.log(v), log_levels[0], log_levels[-1]))
        out = np.empty(self.coefficients.shape[1])
        for j in range(self.coefficients.shape[1]):
            out[j] = np.interp(q, log_levels, self.coefficients[:, j])
        return out

    def __call__(self, x: np.ndarray, v: float) -> np.ndarray:
        return self.features.matrix(np.atleast_1d(x)) @ self.coeff_at(v)

    def to_dict(self) -> dict:
        return {
            "features": self.features.to_dict(),
            "sigmas": self.sigmas.tolist(),
            "coefficients": self.coefficients.tolist(),
            "kind": self.kind,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @staticmethod
    def from_dict(d: dict) -> "LinearScoreModel":
        return LinearScoreModel(
            features=FeatureSpec.from_dict(d["features"]),
            sigmas=np.asarray(d["sigmas"], dtype=float),
            coefficients=np.asarray(d["coefficients"], dtype=float),
            kind=d.get("kind", "score"),
        )

    @staticmethod
    def from_json(text: str) -> "LinearScoreModel":
        return LinearScoreModel.from_dict(json.loads(text))


def _draw_pairs(prior: Prior, sigma: float, n: int, seed: int):
    rng = np.random.default_rng(seed)
    x = sample_prior(prior, n, rng)
    x_tilde = x + sigma * rng.standard_normal(n)
    return x, x_tilde


def dsm_loss_first(model, prior: Prior, sigma: float, sample_count: int, seed: int) -> float:
    """Monte-Carlo first-order denoising score-matching loss at one level.

    ``model`` is any callable (x_tilde, variance) -> score values.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x, x_tilde = _draw_pairs(prior, sigma, sample_count, seed)
    resid = np.asarray(model(x_tilde, sigma**2)) + (x_tilde - x) / sigma**2
    return float(np.mean(resid**2))


def dsm_loss_second_trace(
    model_second,
    model_first,
    prior: Prior,
    sigma: float,
    sample_count: int,
    seed: int,
) -> float:
    """Monte-Carlo trace-form second-order loss at one level (scalar signals).

    The curvature target couples to the first-order model through
    b_hat = s(x_tilde) + (x_tilde - x)/sigma^2; the first-order model is
    treated as frozen.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x, x_tilde = _draw_pairs(prior, sigma, sample_count, seed)
    b_hat = np.asarray(model_first(x_tilde, sigma**2)) + (x_tilde - x) / sigma**2
    resid = np.asarray(model_second(x_tilde, sigma**2)) - b_hat**2 + 1.0 / sigma**2
    return float(np.mean(resid**2))


def unified_loss_first(model, prior: Prior, schedule: NoiseSchedule, sample_count: int, seed: int) -> float:
    """Weighted average of the first-order loss over the schedule."""
    losses = [
        w * dsm_loss_first(model, prior, s, sample_count, seed + i)
        for i, (s, w) in enumerate(zip(schedule.sigmas, schedule.weights_first))
    ]
    return float(np.mean(losses))


def unified_loss_second(
    model_second, model_first, prior: Prior, schedule: NoiseSchedule, sample_count: int, seed: int
) -> float:
    """Weighted average of the trace-form loss over the schedule."""
    losses = [
        w * dsm_loss_second_trace(model_second, model_first, prior, s, sample_count, seed + i)
        for i, (s, w) in enumerate(zip(schedule.sigmas, schedule.weights_second))
    ]
    return float(np.mean(losses))


def _solve_ls(phi: np.ndarray, target: np.ndarray) -> np.ndarray:
    coef, _, rank, _ = np.linalg.lstsq(phi, target, rcond=None)
    if rank < phi.shape[1]:
        warnings.warn(
            f"feature matrix is rank deficient ({rank}/{phi.shape[1]}); using ridge solve",
            stacklevel=2,
        )
        gram = phi.T @ phi
        lam = 1e-8 * np.trace(gram) / phi.shape[1]
        coef = np.linalg.solve(gram + lam * np.eye(phi.shape[1]), phi.T @ target)
    return coef


def fit_linear_score(
    prior: Prior,
    schedule: NoiseSchedule,
    features: FeatureSpec,
    sample_count: int,
    seed: int,
) -> tuple[LinearScoreModel, LinearScoreModel]:
    """Exact per-level least-squares fit of the score and curvature models.

    Two-stage: the first-order model is fitted and then frozen inside the
    second-order target, so no coupling flows back.  Per-level weights do
    not enter (coefficient sets are independent across levels).
    """
    n_levels = len(schedule.sigmas)
    coef1 = np.empty((n_levels, features.n_features))
    coef2 = np.empty((n_levels, features.n_features))
    for i, sigma in enumerate(schedule.sigmas):
        x, x_tilde = _draw_pairs(prior, sigma, sample_count, seed + i)
        phi = features.matrix(x_tilde)
        noise_score = (x_tilde - x) / sigma**2
        coef1[i] = _solve_ls(phi, -noise_score)
        b_hat = phi @ coef1[i] + noise_score
        coef2[i] = _solve_ls(phi, b_hat**2 - 1.0 / sigma**2)
    first = LinearScoreModel(features=features, sigmas=schedule.sigmas, coefficients=coef1, kind="score")
    second = LinearScoreModel(features=features, sigmas=schedule.sigmas, coefficients=coef2, kind="curvature")
    return first, second


def fitted_denoiser(first: LinearScoreModel, second: LinearScoreModel):
    """Wrap fitted score/curvature models as an engine denoiser backend."""

    def denoiser(r: np.ndarray, v: float) -> DenoiserOutput:
        r = np.asarray(r, dtype=float)
        mean = r + v * first(r, v)
        raw_var = v + v * v * float(np.mean(second(r, v)))
        return DenoiserOutput(mean=mean, variance=clamp_variance(raw_var, v))

    return denoiser
