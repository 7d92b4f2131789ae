"""Kendall's tau between a true ranking and its noise-corrupted version.

``tau`` is the [0, 1] variant: the fraction of object pairs whose relative
order agrees.  The analytical moments average over true scores drawn i.i.d.
from ``q`` as well as over the noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .bvn import bvn_cdf
from .dist import (
    DEFAULT_RTOL,
    ScoreDistribution,
    gauss_legendre_panels,
    integrate_adaptive,
)
from .errors import ConvergenceError

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class TauMoments:
    mu_tau: float
    sigma2_tau: float
    n_objects: int
    e_tau12_tau23: float

    @property
    def sigma_tau(self) -> float:
        return math.sqrt(self.sigma2_tau)


def _check_sigma(sigma):
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ValueError(f"sigma must be finite and positive, got {sigma!r}")


def as_permutation(perm, n=None) -> np.ndarray:
    """Validate a rank vector (a permutation of 1..N) and return it 0-based."""
    p = np.asarray(perm)
    if p.ndim != 1 or p.size < 1:
        raise ValueError("a permutation must be a non-empty 1-D sequence")
    if not np.issubdtype(p.dtype, np.integer):
        if not np.all(np.mod(p, 1) == 0):
            raise ValueError("permutation entries must be integers")
        p = p.astype(np.int64)
    if n is not None and p.size != n:
        raise ValueError(f"permutation lengths differ ({p.size} != {n})")
    if not np.array_equal(np.sort(p), np.arange(1, p.size + 1)):
        raise ValueError("input is not a permutation of 1..N")
    return p.astype(np.int64) - 1


def count_inversions(seq) -> int:
    """Number of pairs ``i < j`` with ``seq[i] > seq[j]``.

    ``seq`` must hold the distinct integers ``0..n-1``.  Bottom-up merge sort:
    at every level each element of a right block counts the larger elements
    of its left sibling with one global ``searchsorted``.  O(n log^2 n) work,
    all of it in numpy.
    """
    vals = np.asarray(seq, dtype=np.int64)
    n = vals.size
    pos = np.arange(n)
    inversions = 0
    width = 1
    while width < n:
        block = pos // width
        pair = block >> 1
        keys = pair * n + vals
        right = (block & 1).astype(bool)
        left_keys = keys[~right]
        right_keys = keys[right]
        right_pair = pair[right]
        upper = np.searchsorted(left_keys, right_pair * n + n, side="left")
        below = np.searchsorted(left_keys, right_keys, side="right")
        inversions += int((upper - below).sum())
        vals = np.sort(keys) - pair * n  # pair ids are already non-decreasing in position
        width <<= 1
    return inversions


def tau_from_sequence(seq) -> float:
    """Kendall tau of a sequence of 0-based true ranks listed in observed order."""
    n = len(seq)
    pairs = n * (n - 1) // 2
    return (pairs - count_inversions(seq)) / pairs


def exact_tau(perm_true, perm_obs) -> float:
    """Fraction of unordered pairs ordered identically by two rank vectors.

    ``perm_true[i]`` and ``perm_obs[i]`` are the ranks (1..N) of object ``i``.
    """
    a = as_permutation(perm_true)
    b = as_permutation(perm_obs, a.size)
    if a.size < 2:
        raise ValueError("need at least two objects")
    order = np.argsort(a)
    return tau_from_sequence(b[order])


def pair_agreement_prob(r_i, r_j, sigma):
    """Probability that noise leaves the relative order of two objects unchanged."""
    _check_sigma(sigma)
    return ndtr(np.abs(np.asarray(r_j, dtype=float) - r_i) / (SQRT2 * sigma))


def mean_tau(q: ScoreDistribution, sigma: float, rtol: float = DEFAULT_RTOL) -> float:
    """Expected tau, by adaptive 2-D quadrature over pairs of true scores.

    The pair is parametrised as ``(m, m + d)`` with ``d >= 0`` so the ``|r2 - r1|``
    kink sits on the boundary; the factor 2 accounts for the mirrored half.
    """
    _check_sigma(sigma)
    a, b = q.support
    length = b - a
    s = SQRT2 * sigma

    def pair_density(d):
        return integrate_adaptive(
            lambda m: float(q.pdf(m) * q.pdf(m + d)), a, b - d, rtol=rtol * 1e-2, atol=1e-15
        )

    def outer(d):
        return pair_density(d) * float(ndtr(d / s))

    pts = [c * s for c in (1.0, 4.0)]
    return 2.0 * integrate_adaptive(outer, 0.0, length, rtol=rtol, atol=1e-13, points=pts)


def _axis_breakpoints(length, scale, s):
    base = np.linspace(0.0, length, int(math.ceil(length / scale)) + 1)
    fine = s * np.array([0.25, 0.5, 1.0, 2.0, 4.0, 8.0])
    bp = np.unique(np.concatenate([base, fine[fine < length]]))
    return bp


def cross_moment_tau(
    q: ScoreDistribution,
    sigma: float,
    rtol: float = 1e-9,
    max_order: int = 32,
) -> float:
    """``E(tau_12 tau_23)``: both pairs sharing object 2 keep their order.

    Given the true scores, the two agreement events form an orthant of the
    bivariate normal ``(Z1 - Z2, Z2 - Z3) / (sqrt(2) sigma)`` with correlation
    -1/2 when object 2 is the middle score, +1/2 when it is an extreme.  The
    remaining integral over (r1, r2, r3) is a tensor Gauss-Legendre rule over
    (shared score, gap, gap); the shared-score sum is a matrix product.
    Per-panel order is raised until successive values agree to ``rtol``.
    """
    _check_sigma(sigma)
    a, b = q.support
    length = b - a
    s = SQRT2 * sigma
    m_bp = np.linspace(a, b, 17)
    e_bp = _axis_breakpoints(length, q.scale, s)

    def evaluate(order):
        m, wm = gauss_legendre_panels(m_bp, order)
        e, we = gauss_legendre_panels(e_bp, order)
        qm = q.pdf(m)
        up = q.pdf(m[:, None] + e[None, :])
        down = q.pdf(m[:, None] - e[None, :])
        mid = (wm * qm)[:, None]
        k_chain = down.T @ (mid * up)  # r1 = m - e_i, r3 = m + e_j
        k_min = up.T @ (mid * up)
        k_max = down.T @ (mid * down)
        hh = e[:, None] / s
        kk = e[None, :] / s
        phi_neg = bvn_cdf(hh, kk, -0.5)
        phi_pos = bvn_cdf(hh, kk, 0.5)
        ww = we[:, None] * we[None, :]
        # chain orderings: r1 < r2 < r3 and its mirror; extremes cover 4 orderings
        # (each quadrant integral counts two of them)
        return float(np.sum(ww * (2.0 * k_chain * phi_neg + (k_min + k_max) * phi_pos)))

    prev = evaluate(6)
    for order in (8, 12, 16, 24, 32):
        if order > max_order:
            break
        cur = evaluate(order)
        if abs(cur - prev) <= rtol * abs(cur):
            return min(max(cur, 0.0), 1.0)
        prev = cur
    raise ConvergenceError("tensor quadrature for E(tau12 tau23) did not settle", abs(cur - prev))


def var_tau(q: ScoreDistribution, sigma: float, n_objects: int, rtol: float = DEFAULT_RTOL) -> float:
    return tau_moments(q, sigma, n_objects, rtol).sigma2_tau


def _assemble_variance(mu, e12_23, n):
    pairs = n * (n - 1) / 2.0
    v = (mu + (3.0 - 2.0 * n) * mu * mu + 2.0 * (n - 2.0) * e12_23) / pairs
    return max(v, 0.0)


def tau_moments(q: ScoreDistribution, sigma: float, n_objects: int, rtol: float = DEFAULT_RTOL) -> TauMoments:
    """Mean and variance of tau for ``n_objects`` i.i.d. true scores."""
    if int(n_objects) != n_objects or n_objects < 3:
        raise ValueError(f"n_objects must be an integer >= 3, got {n_objects!r}")
    n = int(n_objects)
    mu = mean_tau(q, sigma, rtol)
    e = cross_moment_tau(q, sigma)
    return TauMoments(mu, _assemble_variance(mu, e, n), n, e)


def tau_reliability(
    q: ScoreDistribution,
    sigma: float,
    n_objects: int,
    epsilon: float,
    moments: TauMoments | None = None,
) -> float:
    """``Pr(tau >= 1 - epsilon)`` under the Gaussian approximation of tau.

    The approximation is not backed by a central limit theorem; at small N it
    should be checked against simulation.
    """
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon!r}")
    threshold = 1.0 - epsilon
    if threshold <= 0.0:
        return 1.0
    m = moments or tau_moments(q, sigma, n_objects)
    if m.sigma2_tau == 0.0:
        return 1.0 if m.mu_tau >= threshold else 0.0
    p = float(ndtr((m.mu_tau - threshold) / m.sigma_tau))
    return min(max(p, 0.0), 1.0)
