"""Independent quadrature oracles shared by the test modules.

These deliberately avoid the library's truncated-Gaussian code path:
interval masses come straight from scipy's log CDF with an expm1
difference, and moments from log-domain Gauss-Legendre quadrature over
the measurement-space posterior.
"""

import numpy as np
from scipy.special import log_ndtr, ndtr, roots_legendre

_NODES, _WEIGHTS = roots_legendre(700)


def log_interval_mass(lo, hi, mu, sd):
    """log P(lo < X <= hi) for X ~ N(mu, sd^2); mu may be a vector."""
    mu = np.asarray(mu, dtype=float)
    a = (lo - mu) / sd if np.isfinite(lo) else np.full_like(mu, -np.inf)
    b = (hi - mu) / sd if np.isfinite(hi) else np.full_like(mu, np.inf)
    out = np.empty_like(mu)

    mid = (a <= 0) & (b >= 0)
    if np.any(mid):
        out[mid] = np.log(ndtr(b[mid]) - ndtr(a[mid]))
    right = a > 0
    if np.any(right):
        la = log_ndtr(-a[right])
        bb = b[right]
        lb = np.where(np.isinf(bb), -np.inf, log_ndtr(-np.where(np.isinf(bb), 0.0, bb)))
        out[right] = la + np.log(-np.expm1(lb - la))
    left = b < 0
    if np.any(left):
        lb = log_ndtr(b[left])
        aa = a[left]
        la = np.where(np.isinf(aa), -np.inf, log_ndtr(np.where(np.isinf(aa), 0.0, aa)))
        out[left] = lb + np.log(-np.expm1(la - lb))
    return out


def truncated_posterior_oracle(z_pri, v, noise_var, r_lo, r_hi):
    """Posterior mean/variance of z ~ N(z_pri, v) given z + n in (r_lo, r_hi].

    Composite log-domain Gauss-Legendre over a window centered on the
    posterior mode, with segment breaks at the interval edges (the
    likelihood transitions on the noise scale there); accurate to
    ~1e-12 for interval masses representable in float64 (checked
    against 50-digit mpmath quadrature).
    """
    s2 = v + noise_var
    lo_bound = r_lo if np.isfinite(r_lo) else -np.inf
    hi_bound = r_hi if np.isfinite(r_hi) else np.inf
    u_star = np.clip(z_pri, lo_bound, hi_bound)
    c = z_pri + (v / s2) * (u_star - z_pri)
    half = 16.0 * np.sqrt(v)
    lo, hi = c - half, c + half
    if noise_var == 0.0:
        lo = max(lo, r_lo) if np.isfinite(r_lo) else lo
        hi = min(hi, r_hi) if np.isfinite(r_hi) else hi
    inner = []
    if noise_var > 0:
        # the likelihood vanishes outside the noise-widened interval and
        # transitions on the noise scale around each edge; give the
        # transition zones their own quadrature segments
        pad = 16.0 * np.sqrt(noise_var)
        if np.isfinite(r_lo):
            lo = max(lo, r_lo - pad)
            inner += [r_lo - pad, r_lo, r_lo + pad]
        if np.isfinite(r_hi):
            hi = min(hi, r_hi + pad)
            inner += [r_hi - pad, r_hi, r_hi + pad]
    breaks = sorted({lo, hi} | {b for b in inner if lo < b < hi})
    zs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        zs.append(0.5 * (b - a) * _NODES + 0.5 * (b + a))
        ws.append(0.5 * (b - a) * _WEIGHTS)
    z = np.concatenate(zs)
    w = np.concatenate(ws)
    logf = -((z - z_pri) ** 2) / (2.0 * v)
    if noise_var > 0:
        logf = logf + log_interval_mass(r_lo, r_hi, z, np.sqrt(noise_var))
    logf -= logf.max()
    f = np.exp(logf)
    m0 = np.sum(w * f)
    zc = z - c
    m1 = np.sum(w * zc * f) / m0
    m2 = np.sum(w * zc * zc * f) / m0
    return c + m1, m2 - m1 * m1


def mp_truncated_posterior_oracle(z_pri, v, noise_var, r_lo, r_hi, dps=50):
    """High-precision mpmath version of the oracle for spot checks."""
    import mpmath as mp

    with mp.workdps(dps):
        zp, vv, dd = mp.mpf(z_pri), mp.mpf(v), mp.mpf(noise_var)
        s2 = vv + dd
        u_star = zp
        if np.isfinite(r_lo):
            u_star = max(u_star, mp.mpf(r_lo))
        if np.isfinite(r_hi):
            u_star = min(u_star, mp.mpf(r_hi))
        c = zp + (vv / s2) * (u_star - zp)

        def lik(z):
            if dd == 0:
                return mp.mpf(1)
            sd = mp.sqrt(dd)
            hi_t = mp.ncdf((mp.mpf(r_hi) - z) / sd) if np.isfinite(r_hi) else mp.mpf(1)
            lo_t = mp.ncdf((mp.mpf(r_lo) - z) / sd) if np.isfinite(r_lo) else mp.mpf(0)
            return hi_t - lo_t

        def dens(z):
            return mp.exp(-((z - zp) ** 2) / (2 * vv)) * lik(z)

        half = 18 * mp.sqrt(vv)
        a, b = c - half, c + half
        edges = []
        if dd == 0:
            if np.isfinite(r_lo):
                a = max(a, mp.mpf(r_lo))
            if np.isfinite(r_hi):
                b = min(b, mp.mpf(r_hi))
        else:
            pad = 18 * mp.sqrt(dd)
            if np.isfinite(r_lo):
                a = max(a, mp.mpf(r_lo) - pad)
                edges += [mp.mpf(r_lo) - pad, mp.mpf(r_lo), mp.mpf(r_lo) + pad]
            if np.isfinite(r_hi):
                b = min(b, mp.mpf(r_hi) + pad)
                edges += [mp.mpf(r_hi) - pad, mp.mpf(r_hi), mp.mpf(r_hi) + pad]
        pts = sorted(
            {a, b} | {p for p in [c, c - mp.sqrt(vv), c + mp.sqrt(vv)] + edges if a < p < b}
        )
        m0 = mp.quad(dens, pts)
        m1 = mp.quad(lambda z: (z - c) * dens(z), pts) / m0
        m2 = mp.quad(lambda z: (z - c - m1) ** 2 * dens(z), pts) / m0
        return float(c + m1), float(m2)
