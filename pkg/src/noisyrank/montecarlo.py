"""Monte-Carlo simulation of ranking under additive Gaussian noise.

The procedure draws one vector of true scores, then for every noise level on
the grid repeatedly perturbs it, re-ranks and records Kendall's tau and the
top-K overlap against the true ranking.  ``redraw`` can instead draw fresh
true scores per grid point or per iteration; the latter samples the
score-averaged law that the analytical moments describe.

Randomness comes from Philox counter streams.  Iteration ``i`` at grid index
``g`` uses the stream keyed by ``seed`` with counter words ``(i, g + 1)``;
true scores use counter word ``0``.  Streams never depend on scheduling, so
results are identical for any number of worker threads.
"""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .dist import ScoreDistribution, gaussian
from .kendall import tau_from_sequence

REDRAW_MODES = ("never", "per_sigma", "per_iteration")
NORMAL_METHODS = ("ziggurat", "inverse_cdf")
MAX_RETAINED_RECORDS = 10**6
CSV_COLUMNS = ("sigma", "mean_tau", "se_tau", "var_tau", "mean_f", "se_f", "var_f")


def sigma_grid(sigma_min: float, sigma_step: float, sigma_max: float) -> list[float]:
    """Noise levels ``sigma_min, sigma_min + step, ...`` up to ``sigma_max`` inclusive."""
    if sigma_min < 0 or sigma_max < sigma_min:
        raise ValueError("need 0 <= sigma_min <= sigma_max")
    if sigma_max == sigma_min:
        return [float(sigma_min)]
    if not sigma_step > 0:
        raise ValueError("sigma_step must be positive")
    n = int(math.floor((sigma_max - sigma_min) / sigma_step + 1e-9))
    return [float(sigma_min + j * sigma_step) for j in range(n + 1)]


def rank_scores(scores) -> np.ndarray:
    """Ranks 1..N by decreasing score; ties go to the lower original index."""
    s = np.asarray(scores, dtype=float)
    if s.ndim != 1:
        raise ValueError("scores must be one-dimensional")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    ranks = np.empty(s.size, dtype=np.int64)
    ranks[np.argsort(-s, kind="stable")] = np.arange(1, s.size + 1)
    return ranks


def _stream(seed: int, word2: int, word3: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, word2, word3]))


def _normals(gen: np.random.Generator, n: int, method: str) -> np.ndarray:
    if method == "ziggurat":
        return gen.standard_normal(n)
    # midpoints of a 2**53 lattice keep the uniforms strictly inside (0, 1)
    u = (gen.integers(0, 2**53, size=n, dtype=np.int64) + 0.5) / 2.0**53
    return ndtri(u)


@dataclass
class SimulationConfig:
    n_objects: int
    k: int
    sigma_grid: Sequence[float]
    n_iterations: int
    seed: int = 0
    distribution: ScoreDistribution | None = None
    fixed_scores: Sequence[float] | None = None
    redraw: str = "never"
    normal_method: str = "ziggurat"
    keep_samples: bool | None = None

    def __post_init__(self):
        self.sigma_grid = [float(s) for s in self.sigma_grid]
        if self.fixed_scores is None and self.distribution is None:
            self.distribution = gaussian(0.0, 1.0)
        self.validate()

    def validate(self):
        if int(self.n_objects) != self.n_objects or self.n_objects < 2:
            raise ValueError("n_objects must be an integer >= 2")
        if int(self.k) != self.k or not 1 <= self.k <= self.n_objects:
            raise ValueError(f"k must be an integer in [1, {self.n_objects}]")
        if int(self.n_iterations) != self.n_iterations or self.n_iterations < 1:
            raise ValueError("n_iterations must be a positive integer")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        grid = np.asarray(self.sigma_grid)
        if grid.size == 0:
            raise ValueError("sigma grid is empty")
        if not np.all(np.isfinite(grid)) or np.any(grid < 0):
            raise ValueError("sigma values must be finite and >= 0")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("sigma grid must be strictly increasing")
        if self.redraw not in REDRAW_MODES:
            raise ValueError(f"redraw must be one of {REDRAW_MODES}")
        if self.normal_method not in NORMAL_METHODS:
            raise ValueError(f"normal_method must be one of {NORMAL_METHODS}")
        if self.fixed_scores is not None:
            s = np.asarray(self.fixed_scores, dtype=float)
            if s.shape != (self.n_objects,):
                raise ValueError("fixed_scores must have n_objects entries")
            if not np.all(np.isfinite(s)):
                raise ValueError("fixed_scores must be finite")
            if self.redraw != "never":
                raise ValueError("a fixed score vector cannot be redrawn")
        elif not self.distribution.is_gaussian:
            raise ValueError("score draws need a Gaussian distribution")

    @property
    def retain_samples(self) -> bool:
        if self.keep_samples is not None:
            return self.keep_samples
        return self.n_iterations * len(self.sigma_grid) <= MAX_RETAINED_RECORDS

    def echo(self) -> dict:
        d = {
            "n_objects": int(self.n_objects),
            "k": int(self.k),
            "sigma_grid": list(self.sigma_grid),
            "n_iterations": int(self.n_iterations),
            "seed": int(self.seed),
            "redraw": self.redraw,
            "normal_method": self.normal_method,
        }
        if self.fixed_scores is not None:
            d["score_source"] = "fixed"
        else:
            q = self.distribution
            d["score_source"] = {"kind": q.kind, "mean": q.mean, "sigma_q": q.sigma_q}
        return d


@dataclass(frozen=True)
class SigmaSummary:
    sigma: float
    mean_tau: float
    se_tau: float
    var_tau: float
    mean_f: float
    se_f: float
    var_f: float


@dataclass
class SimulationResult:
    config: SimulationConfig
    rows: list[SigmaSummary]
    tau_samples: np.ndarray | None = field(default=None, repr=False)
    f_samples: np.ndarray | None = field(default=None, repr=False)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for row in self.rows:
            buf.write(",".join(format(getattr(row, c), ".17g") for c in CSV_COLUMNS) + "\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "config": self.config.echo(),
            "seed": int(self.config.seed),
            "rows": [asdict(r) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=True)


def _summary(sigma, taus, fs) -> SigmaSummary:
    n = taus.size
    if n > 1:
        vt, vf = float(np.var(taus, ddof=1)), float(np.var(fs, ddof=1))
    else:
        vt = vf = float("nan")
    return SigmaSummary(
        sigma=float(sigma),
        mean_tau=float(np.mean(taus)),
        se_tau=math.sqrt(vt / n) if n > 1 else float("nan"),
        var_tau=vt,
        mean_f=float(np.mean(fs)),
        se_f=math.sqrt(vf / n) if n > 1 else float("nan"),
        var_f=vf,
    )


def _true_rank(r):
    rank = np.empty(r.size, dtype=np.int64)
    rank[np.argsort(-r, kind="stable")] = np.arange(r.size)
    return rank


def simulate(config: SimulationConfig, threads: int | None = None) -> SimulationResult:
    """Run the simulation; ``threads`` caps worker threads (default: all cores)."""
    config.validate()
    n, k, n_it = int(config.n_objects), int(config.k), int(config.n_iterations)
    seed = int(config.seed)
    grid = config.sigma_grid
    method = config.normal_method
    q = config.distribution

    def draw_scores(gen):
        return q.mean + q.sigma_q * _normals(gen, n, method)

    base = {}
    if config.fixed_scores is not None:
        fixed = np.asarray(config.fixed_scores, dtype=float)
        base = {g: fixed for g in range(len(grid))}
    elif config.redraw == "never":
        r0 = draw_scores(_stream(seed, 0, 0))
        base = {g: r0 for g in range(len(grid))}
    elif config.redraw == "per_sigma":
        base = {g: draw_scores(_stream(seed, g, 0)) for g in range(len(grid))}
    ranks = {g: _true_rank(r) for g, r in base.items()}

    taus = np.empty((len(grid), n_it))
    fs = np.empty((len(grid), n_it))

    def run(g, start, stop):
        sigma = grid[g]
        for i in range(start, stop):
            gen = _stream(seed, i, g + 1)
            if config.redraw == "per_iteration":
                r = draw_scores(gen)
                rank = _true_rank(r)
            else:
                r, rank = base[g], ranks[g]
            s = r + sigma * _normals(gen, n, method) if sigma > 0 else r
            seq = rank[np.argsort(-s, kind="stable")]
            taus[g, i] = tau_from_sequence(seq)
            fs[g, i] = np.count_nonzero(seq[:k] < k) / k

    workers = max(1, int(threads)) if threads else _default_threads()
    chunk = max(1, math.ceil(n_it / (4 * workers)))
    tasks = [(g, s, min(s + chunk, n_it)) for g in range(len(grid)) for s in range(0, n_it, chunk)]
    if workers == 1:
        for t in tasks:
            run(*t)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for fut in [pool.submit(run, *t) for t in tasks]:
                fut.result()

    rows = [_summary(grid[g], taus[g], fs[g]) for g in range(len(grid))]
    keep = config.retain_samples
    return SimulationResult(config, rows, taus if keep else None, fs if keep else None)


def _default_threads() -> int:
    import os

    return os.cpu_count() or 1
