"""Closed-form MMSE denoisers for the built-in analytic priors.

Every backend maps (noisy vector r, noise variance v) to the posterior
mean vector and the average posterior variance under the prior, the
contract the wire protocol serves.  Posterior variances are clamped into
[1e-9, 0.999 v], matching what message-passing clients expect before
forming extrinsic messages.
"""

from __future__ import annotations

import numpy as np

VARIANCE_FLOOR = 1e-9
VARIANCE_CAP_REL = 0.999


def _mixture_posterior(weights, means, variances, r, v):
    """Posterior mean/variance under a scalar Gaussian mixture prior.

    Components with zero variance are point masses (the sparse spike).
    Responsibilities are computed in the log domain.
    """
    w = np.asarray(weights, dtype=float)
    mu = np.asarray(means, dtype=float)
    tau = np.asarray(variances, dtype=float)
    keep = w > 0.0
    w, mu, tau = w[keep], mu[keep], tau[keep]
    r = np.asarray(r, dtype=float)

    s = tau + v  # marginal variance of r under each component
    d = r[:, None] - mu[None, :]
    log_post = np.log(w)[None, :] - 0.5 * np.log(2.0 * np.pi * s)[None, :] - d * d / (2.0 * s[None, :])
    log_post = log_post - log_post.max(axis=1, keepdims=True)
    gamma = np.exp(log_post)
    gamma /= gamma.sum(axis=1, keepdims=True)

    m_k = (tau[None, :] * r[:, None] + v * mu[None, :]) / s[None, :]
    s_k = tau * v / s
    mean = np.sum(gamma * m_k, axis=1)
    var = np.sum(gamma * (s_k[None, :] + m_k**2), axis=1) - mean**2
    return mean, var


def make_denoiser(descriptor: dict):
    """Build a denoiser callable from a prior descriptor.

    Descriptor kinds: ``gaussian`` (mean, variance), ``gmm`` (weights,
    means, variances), ``bernoulli_gaussian`` (sparsity, slab_variance).
    """
    kind = descriptor.get("kind")
    if kind == "gaussian":
        w, mu, tau = [1.0], [float(descriptor.get("mean", 0.0))], [float(descriptor["variance"])]
        if tau[0] <= 0:
            raise ValueError("variance must be positive")
    elif kind == "gmm":
        w = [float(x) for x in descriptor["weights"]]
        mu = [float(x) for x in descriptor["means"]]
        tau = [float(x) for x in descriptor["variances"]]
        if len(w) != len(mu) or len(w) != len(tau):
            raise ValueError("weights, means, variances must have equal length")
        if any(x <= 0 for x in w) or abs(sum(w) - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if any(t <= 0 for t in tau):
            raise ValueError("component variances must be positive")
    elif kind == "bernoulli_gaussian":
        rho = float(descriptor["sparsity"])
        slab = float(descriptor["slab_variance"])
        if not (0.0 < rho <= 1.0) or slab <= 0:
            raise ValueError("need 0 < sparsity <= 1 and positive slab_variance")
        w, mu, tau = [1.0 - rho, rho], [0.0, 0.0], [0.0, slab]
    else:
        raise ValueError(f"unknown prior kind {kind!r}")

    def denoise(r: np.ndarray, v: float):
        if v <= 0:
            raise ValueError("noise variance must be positive")
        mean, var = _mixture_posterior(w, mu, tau, r, v)
        avg = float(np.mean(var))
        hi = VARIANCE_CAP_REL * v
        lo = min(VARIANCE_FLOOR, hi)
        return mean, float(min(max(avg, lo), hi))

    return denoise
