"""Gene-selection study planning from Fisher-transformed correlation scores.

Each gene's score is ``|atanh(c)|`` for its correlation ``c`` with outcome
over ``n`` samples.  The Fisher transform has sampling variance
``1 / (n - 3)``, which plays the role of the noise variance; the signal
variance is what remains of the observed score variance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dist import ScoreDistribution, fit_from_samples, gaussian
from .errors import ConvergenceError, NoiseDominatedError, UnreachableTargetError
from .tkl import overlap_mean, overlap_moments, overlap_reliability

MIN_SAMPLES = 4
DEFAULT_ALPHA = 0.01
DEFAULT_N_MAX = 10**6
INGEST_FORMATS = ("plain", "csv-with-id", "correlations")


def fisher_score(c):
    """``|atanh(c)|``; works elementwise on arrays."""
    c = np.asarray(c, dtype=float)
    if np.any(~np.isfinite(c)) or np.any(np.abs(c) >= 1.0):
        raise ValueError("correlations must lie strictly inside (-1, 1)")
    out = np.abs(np.arctanh(c))
    return float(out) if out.ndim == 0 else out


def _check_n(n_samples):
    if int(n_samples) != n_samples or n_samples < MIN_SAMPLES:
        raise ValueError(f"n_samples must be an integer >= {MIN_SAMPLES}, got {n_samples!r}")
    return int(n_samples)


def noise_variance(n_samples: int) -> float:
    """Sampling variance ``1 / (n - 3)`` of a Fisher score from ``n`` samples."""
    return 1.0 / (_check_n(n_samples) - 3)


def noise_sigma(n_samples: int) -> float:
    return math.sqrt(noise_variance(n_samples))


@dataclass(frozen=True)
class SignalEstimate:
    v_o: float
    sigma2_noise: float
    sigma2_q: float
    n_samples: int
    mean: float = 0.0
    n_scores: int = 0

    @property
    def sigma_q(self) -> float:
        return math.sqrt(self.sigma2_q)

    @property
    def distribution(self) -> ScoreDistribution:
        return gaussian(self.mean, self.sigma_q)


def estimate_signal(observed_scores: Sequence[float], n_samples: int) -> SignalEstimate:
    """Split the observed score variance into signal and ``1/(n-3)`` noise."""
    n = _check_n(n_samples)
    fit, v_o = fit_from_samples(observed_scores)
    s2n = 1.0 / (n - 3)
    s2q = v_o - s2n
    # a difference at rounding level counts as no signal
    if not s2q > 1e-12 * s2n:
        raise NoiseDominatedError(
            f"noise-dominated data: observed variance {v_o:.6g} does not exceed "
            f"the sampling variance 1/(n-3) = {s2n:.6g}"
        )
    return SignalEstimate(v_o, s2n, s2q, n, fit.mean, len(np.ravel(observed_scores)))


@dataclass(frozen=True)
class StudyDesign:
    n_objects: int
    alpha: float = DEFAULT_ALPHA
    epsilon: float = 0.5
    delta: float = 0.1
    n_samples: int = MIN_SAMPLES

    def __post_init__(self):
        if int(self.n_objects) != self.n_objects or self.n_objects < 1:
            raise ValueError("n_objects must be a positive integer")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        k = round(self.alpha * self.n_objects)
        if not 1 <= k <= self.n_objects:
            raise ValueError(f"alpha * N rounds to {k}; the list would be empty")
        for name in ("epsilon", "delta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v!r}")
        _check_n(self.n_samples)

    @property
    def k(self) -> int:
        return int(round(self.alpha * self.n_objects))


@dataclass(frozen=True)
class CurvePoint:
    n: int
    sigma: float
    f0: float = float("nan")
    sigma_f: float = float("nan")
    mean_f: float = float("nan")
    reliability: float = float("nan")
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _check_fraction(name, v):
    if not 0.0 < v < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {v!r}")


def expected_overlap_curve(
    sigma_q: float,
    alpha: float,
    n_objects: int,
    n_range: Iterable[int],
    epsilon: float | None = None,
) -> list[CurvePoint]:
    """Overlap centre, spread and (optionally) reliability against sample size.

    A point whose saddle solve fails carries the error message instead of
    numbers; the remaining points are unaffected.
    """
    if not sigma_q > 0:
        raise ValueError("sigma_q must be positive")
    _check_fraction("alpha", alpha)
    q = gaussian(0.0, sigma_q)
    points = []
    for n in sorted(set(_check_n(n) for n in n_range)):
        sigma = noise_sigma(n)
        try:
            m = overlap_moments(q, sigma, alpha, n_objects)
            rel = (
                overlap_reliability(q, sigma, alpha, n_objects, epsilon, m)
                if epsilon is not None
                else float("nan")
            )
            points.append(
                CurvePoint(n, sigma, m.f0, m.sigma_f, overlap_mean(q, sigma, alpha, n_objects, m), rel)
            )
        except (ConvergenceError, FloatingPointError, ZeroDivisionError) as exc:
            points.append(CurvePoint(n, sigma, error=f"{type(exc).__name__}: {exc}"))
    return points


@dataclass
class SamplePlan:
    n_star: int
    reliability: float
    trace: list[tuple[int, float, bool]] = field(default_factory=list)


def plan_sample_size(
    sigma_q: float,
    alpha: float,
    n_objects: int,
    epsilon: float,
    delta: float,
    n_max: int = DEFAULT_N_MAX,
) -> SamplePlan:
    """Smallest ``n`` with ``Pr(f >= 1 - epsilon) >= 1 - delta``.

    The criterion is monotone in ``n``, so the search doubles ``n`` from 4
    until it holds and then bisects the last bracket.  ``trace`` records
    every evaluation as ``(n, reliability, criterion)``.
    """
    if not sigma_q > 0:
        raise ValueError("sigma_q must be positive")
    _check_fraction("alpha", alpha)
    _check_fraction("epsilon", epsilon)
    _check_fraction("delta", delta)
    q = gaussian(0.0, sigma_q)
    trace: list[tuple[int, float, bool]] = []
    cache: dict[int, float] = {}

    def reliability(n):
        if n not in cache:
            cache[n] = overlap_reliability(q, noise_sigma(n), alpha, n_objects, epsilon)
            trace.append((n, cache[n], cache[n] >= 1.0 - delta))
        return cache[n]

    def holds(n):
        return reliability(n) >= 1.0 - delta

    lo = MIN_SAMPLES
    if holds(lo):
        return SamplePlan(lo, cache[lo], trace)
    hi = 2 * lo
    while not holds(hi):
        if hi >= n_max:
            raise UnreachableTargetError(
                f"target Pr(f >= {1 - epsilon:g}) >= {1 - delta:g} not reached for n <= {n_max}"
            )
        lo, hi = hi, min(2 * hi, n_max)
    # invariant: criterion false at lo, true at hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if holds(mid):
            hi = mid
        else:
            lo = mid
    return SamplePlan(hi, cache[hi], trace)


def _parse_float(text, lineno, path):
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"{path}:{lineno}: cannot parse {text!r} as a number") from None
    if not math.isfinite(v):
        raise ValueError(f"{path}:{lineno}: non-finite value {text!r}")
    return v


def ingest_scores(path, format: str = "plain", correlations: bool = False) -> list[float]:
    """Read scores from a text file.

    ``plain`` has one number per line; ``csv-with-id`` has ``id,value``
    rows; ``correlations`` holds raw correlations (bare or ``id,value``)
    that are Fisher-transformed.  ``correlations=True`` applies the
    transform to the other layouts too.  Blank lines and lines starting with
    ``#`` are skipped.
    """
    if format not in INGEST_FORMATS:
        raise ValueError(f"unknown score format {format!r}; expected one of {INGEST_FORMATS}")
    transform = correlations or format == "correlations"
    path = Path(path)
    scores = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            fields = [c.strip() for c in row]
            if format == "plain" and len(fields) != 1:
                raise ValueError(f"{path}:{lineno}: expected one value, got {len(fields)} fields")
            if format == "csv-with-id" and len(fields) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'id,value', got {len(fields)} fields")
            if format == "correlations" and len(fields) not in (1, 2):
                raise ValueError(f"{path}:{lineno}: expected a value or 'id,value'")
            v = _parse_float(fields[-1], lineno, path)
            if transform:
                if abs(v) >= 1.0:
                    raise ValueError(f"{path}:{lineno}: correlation {v!r} outside (-1, 1)")
                v = fisher_score(v)
            scores.append(v)
    if not scores:
        raise ValueError(f"{path}: no scores found")
    return scores
