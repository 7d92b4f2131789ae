"""Bivariate standard normal CDF.

Vectorised version of A. Genz's BVNU routine, which refines the
Drezner & Wesolowsky (1989) Gauss-Legendre scheme.  Absolute error is around
1e-15 for all correlations.
"""

import numpy as np
from scipy.special import ndtr

_TWO_PI = 2.0 * np.pi


def _nodes(n):
    # Genz tabulates n points on half of [-1, 1]; an equivalent rule is the
    # full 2n-point Gauss-Legendre rule written as 1 +- x.
    x, w = np.polynomial.legendre.leggauss(2 * n)
    return x, w


_RULES = {6: _nodes(6), 12: _nodes(12), 20: _nodes(20)}


def bvn_upper(h, k, rho):
    """``P(X > h, Y > k)`` for a standard bivariate normal with correlation ``rho``.

    ``h`` and ``k`` broadcast against each other; ``rho`` is a scalar.
    """
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    h, k = np.broadcast_arrays(h, k)
    rho = float(rho)
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation must lie in [-1, 1], got {rho}")

    if rho == 0.0:
        return ndtr(-h) * ndtr(-k)

    ar = abs(rho)
    if ar < 0.3:
        x, w = _RULES[6]
    elif ar < 0.75:
        x, w = _RULES[12]
    else:
        x, w = _RULES[20]

    hk = h * k
    if ar < 0.925:
        hs = 0.5 * (h * h + k * k)
        asr = 0.5 * np.arcsin(rho)
        sn = np.sin(asr * (1.0 + x))  # shape (m,)
        sn = sn.reshape((-1,) + (1,) * h.ndim)
        wv = w.reshape((-1,) + (1,) * h.ndim)
        terms = wv * np.exp((sn * hk - hs) / (1.0 - sn * sn))
        return terms.sum(axis=0) * asr / _TWO_PI + ndtr(-h) * ndtr(-k)

    if rho < 0:
        k = -k
        hk = -hk
    bvn = np.zeros(h.shape)
    if ar < 1.0:
        a_s = (1.0 - rho) * (1.0 + rho)
        a = np.sqrt(a_s)
        bs = (h - k) ** 2
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 80.0
        asr = -(bs / a_s + hk) / 2.0
        bvn = a * np.exp(asr) * (1.0 - c * (bs - a_s) * (1.0 - d * bs) / 3.0 + c * d * a_s * a_s)
        b = np.sqrt(bs)
        sp = np.sqrt(_TWO_PI) * ndtr(-b / a)
        bvn = bvn - np.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0)
        a = a / 2.0
        shape = (-1,) + (1,) * h.ndim
        xs = ((a * (1.0 + x)) ** 2).reshape(shape)
        wv = w.reshape(shape)
        with np.errstate(over="ignore", under="ignore"):
            asr_n = -(bs / xs + hk) / 2.0
            sp_n = 1.0 + c * xs * (1.0 + 5.0 * d * xs)
            rs = np.sqrt(1.0 - xs)
            ep = np.exp(-(hk / 2.0) * xs / (1.0 + rs) ** 2) / rs
            contrib = np.where(asr_n > -100.0, np.exp(asr_n) * (sp_n - ep), 0.0)
        bvn = (a * (wv * contrib).sum(axis=0) - bvn) / _TWO_PI

    if rho > 0:
        return bvn + ndtr(-np.maximum(h, k))
    lower = np.where(h < 0, ndtr(k) - ndtr(h), ndtr(-h) - ndtr(-k))
    return np.where(h >= k, -bvn, lower - bvn)


def bvn_cdf(h, k, rho):
    """``P(X < h, Y < k)`` for a standard bivariate normal with correlation ``rho``."""
    return bvn_upper(-np.asarray(h, dtype=float), -np.asarray(k, dtype=float), rho)
