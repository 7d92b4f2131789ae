"""Score distributions, the Gaussian noise model and elementary probability kernels.

Everything here is vectorised over numpy arrays where it makes sense and is
free of shared mutable state.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import ndtr, ndtri

from .errors import ConvergenceError

# Gaussian mass beyond 8 standard deviations is below 1e-15.
TRUNCATION_SIGMAS = 8.0
DEFAULT_RTOL = 1e-8
MIN_FIT_SAMPLES = 30

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def normal_cdf(z):
    """Standard normal CDF, accurate to ~1e-16 absolute (erfc based)."""
    return ndtr(z)


def normal_pdf(z):
    z = np.asarray(z, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def miss_prob(x, r, sigma):
    """Probability that an object with true score ``r`` falls below threshold ``x``.

    The observed score is ``r + Z`` with ``Z ~ N(0, sigma**2)``, so this is
    ``Phi((x - r) / sigma)``.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    return ndtr((np.asarray(x, dtype=float) - r) / sigma)


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean Gaussian measurement noise with standard deviation ``sigma``."""

    sigma: float

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError(f"noise sigma must be finite and >= 0, got {self.sigma!r}")

    @property
    def variance(self) -> float:
        return self.sigma**2


@dataclass(frozen=True)
class ScoreDistribution:
    """Density ``q(r)`` of the true scores.

    Two kinds exist.  ``gaussian`` carries ``mean`` and ``sigma_q``; its
    support is truncated to ``mean +- 8 sigma_q`` for quadrature.
    ``empirical`` carries sorted ``samples`` and only supports quantiles; the
    analytical routines need a density and expect a Gaussian fit instead
    (see :func:`fit_from_samples`).
    """

    kind: str
    mean: float = 0.0
    sigma_q: float = 1.0
    samples: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == "gaussian":
            if not (self.sigma_q > 0 and math.isfinite(self.sigma_q)):
                raise ValueError(f"sigma_q must be finite and positive, got {self.sigma_q!r}")
            if not math.isfinite(self.mean):
                raise ValueError("mean must be finite")
        elif self.kind == "empirical":
            if self.samples is None or len(self.samples) == 0:
                raise ValueError("empirical distribution needs samples")
            s = np.asarray(self.samples, dtype=float)
            if not np.all(np.isfinite(s)):
                raise ValueError("empirical samples must be finite")
            if np.any(np.diff(s) < 0):
                raise ValueError("empirical samples must be sorted ascending")
        else:
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    @property
    def is_gaussian(self) -> bool:
        return self.kind == "gaussian"

    @property
    def support(self) -> tuple[float, float]:
        if self.is_gaussian:
            half = TRUNCATION_SIGMAS * self.sigma_q
            return (self.mean - half, self.mean + half)
        return (float(self.samples[0]), float(self.samples[-1]))

    @property
    def scale(self) -> float:
        """Characteristic width of the density, used to lay out quadrature panels."""
        if self.is_gaussian:
            return self.sigma_q
        return float(np.std(self.samples)) or 1.0

    def _require_density(self):
        if not self.is_gaussian:
            raise ValueError(
                "empirical distributions have no density; fit a Gaussian with fit_from_samples()"
            )

    def pdf(self, r):
        self._require_density()
        return normal_pdf((np.asarray(r, dtype=float) - self.mean) / self.sigma_q) / self.sigma_q

    def cdf(self, r):
        r = np.asarray(r, dtype=float)
        if self.is_gaussian:
            return ndtr((r - self.mean) / self.sigma_q)
        return np.searchsorted(self.samples, r, side="right") / len(self.samples)

    def sf(self, r):
        r = np.asarray(r, dtype=float)
        if self.is_gaussian:
            return ndtr((self.mean - r) / self.sigma_q)
        return 1.0 - self.cdf(r)

    def ppf(self, p):
        """Lower-tail quantile (inverse of :meth:`cdf`)."""
        p = np.asarray(p, dtype=float)
        if self.is_gaussian:
            return self.mean + self.sigma_q * ndtri(p)
        n = len(self.samples)
        # right-continuous inverse: smallest sample with F(sample) > p
        idx = np.clip(np.floor(p * n + 1e-9).astype(int), 0, n - 1)
        return self.samples[idx]

    def quantile(self, alpha: float) -> float:
        """Threshold ``r_alpha`` leaving upper-tail mass ``alpha`` above it."""
        return quantile(self, alpha)


def gaussian(mean: float = 0.0, sigma_q: float = 1.0) -> ScoreDistribution:
    return ScoreDistribution("gaussian", float(mean), float(sigma_q))


def empirical(samples: Sequence[float]) -> ScoreDistribution:
    return ScoreDistribution("empirical", samples=np.sort(np.asarray(samples, dtype=float)))


def quantile(q: ScoreDistribution, alpha: float) -> float:
    """Upper-tail quantile: ``int_{r_alpha}^b q(r) dr = alpha``.

    For empirical distributions the result is an order statistic: admitting
    all samples ``>= r_alpha`` selects the top ``alpha`` fraction.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if q.is_gaussian:
        # -ndtri(alpha) keeps precision for small alpha
        return float(q.mean - q.sigma_q * ndtri(alpha))
    return float(q.ppf(1.0 - alpha))


def fit_from_samples(scores: Sequence[float]) -> tuple[ScoreDistribution, float]:
    """Fit a Gaussian to observed scores.

    Returns the fitted distribution and the observed (unbiased) variance V_o.
    """
    s = np.asarray(scores, dtype=float).ravel()
    if s.size < MIN_FIT_SAMPLES:
        raise ValueError(f"need at least {MIN_FIT_SAMPLES} scores, got {s.size}")
    if not np.all(np.isfinite(s)):
        bad = int(np.flatnonzero(~np.isfinite(s))[0])
        raise ValueError(f"non-finite score at position {bad}")
    v_o = float(np.var(s, ddof=1))
    if not v_o > 0:
        raise ValueError("scores have zero variance")
    return gaussian(float(np.mean(s)), math.sqrt(v_o)), v_o


def integrate_adaptive(
    func: Callable[[float], float],
    a: float,
    b: float,
    rtol: float = DEFAULT_RTOL,
    atol: float = 1e-13,
    points: Sequence[float] | None = None,
    limit: int = 200,
) -> float:
    """Adaptive Gauss-Kronrod (QUADPACK) integral of a scalar function.

    Raises :class:`ConvergenceError` instead of warning when QUADPACK
    reports trouble.
    """
    if points is not None:
        points = [p for p in points if a < p < b] or None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        out = integrate.quad(
            func, a, b, epsabs=atol, epsrel=rtol, limit=limit, points=points, full_output=1
        )
    value, abserr, info = out[0], out[1], out[2]
    if len(out) > 3 and abserr > max(atol, rtol * abs(value)) * 10:
        raise ConvergenceError(f"quadrature did not converge on [{a}, {b}]: {out[3]}", abserr)
    return value


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _leggauss(order: int):
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


def gauss_legendre_panels(breakpoints, order: int = 12):
    """Nodes and weights of a composite Gauss-Legendre rule.

    ``breakpoints`` must be sorted; one ``order``-point rule is placed on each
    panel between consecutive breakpoints.
    """
    bp = np.asarray(breakpoints, dtype=float)
    t, w = _leggauss(order)
    lo, hi = bp[:-1, None], bp[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (lo + hi) * 0.5 + half * t
    weights = half * w
    return nodes.ravel(), weights.ravel()
