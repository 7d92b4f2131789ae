"""Reliability of rankings computed from noisy scores."""

from .dist import NoiseModel, ScoreDistribution, empirical, fit_from_samples, gaussian, quantile
from .errors import ConvergenceError, NoiseDominatedError, SingularJacobianError, UnreachableTargetError
from .kendall import TauMoments, exact_tau, mean_tau, tau_moments, tau_reliability, var_tau
from .montecarlo import SimulationConfig, SimulationResult, rank_scores, sigma_grid, simulate
from .study import (
    SignalEstimate,
    StudyDesign,
    estimate_signal,
    expected_overlap_curve,
    fisher_score,
    ingest_scores,
    noise_variance,
    plan_sample_size,
)
from .tkl import (
    OverlapMoments,
    SaddleSolution,
    exact_overlap,
    mode_overlap,
    overlap_cdf,
    overlap_mean,
    overlap_moments,
    overlap_pdf,
    overlap_reliability,
    overlap_variance,
    saddle_residual,
    solve_saddle,
)

__version__ = "0.1.0"
