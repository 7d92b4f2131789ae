"""Top-K-list overlap between true and noisy rankings via the saddle-point method.

The overlap distribution is written as a large-N integral over the selection
threshold ``x`` and two Fourier variables ``y, z`` enforcing the list size and
the overlap count.  Its stationary point lies at imaginary ``(y, z)``; we work
with the real positive quantities ``u = exp(-iy)`` and ``w = exp(-i(y+z))``,
parametrised internally by ``theta_u = ln u`` and ``theta_w = ln w``.

With those variables the exponent is

    F(x, u, w, f) = (1 - alpha) ln u + alpha (1 - f) ln(w / u)
                    - int_top q(r) ln(1 + P (w - 1)) dr
                    - int_bottom q(r) ln(1 + P (u - 1)) dr

where ``P = Phi((x - r) / sigma)`` is the probability that an object with
true score ``r`` is left out, "top" is ``[r_alpha, b]`` and "bottom" is
``[a, r_alpha]``.  The change of variables has unit Jacobian determinant
squared, so Hessian determinants in ``(x, ln u, ln w)`` equal those in
``(x, y, z)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, log_ndtr, ndtr, ndtri

from .dist import ScoreDistribution, gauss_legendre_panels
from .errors import ConvergenceError, SingularJacobianError
from .kendall import as_permutation

RESIDUAL_TOL = 1e-9
PANEL_ORDER = 12
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_THETA_STEP_CAP = 4.0


@dataclass(frozen=True)
class SaddleSolution:
    x: float
    u: float
    w: float
    f: float
    F_value: float
    det_H: float
    det_R: float
    converged: bool
    residual_norm: float
    iterations: int = 0
    fd_mismatch: float = float("nan")
    hessian: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def theta_u(self) -> float:
        return math.log(self.u)

    @property
    def theta_w(self) -> float:
        return math.log(self.w)


@dataclass(frozen=True)
class OverlapMoments:
    f0: float
    sigma2_f: float
    alpha: float
    n_objects: int
    saddle: SaddleSolution | None = field(default=None, repr=False, compare=False)

    @property
    def sigma_f(self) -> float:
        return math.sqrt(self.sigma2_f)


def exact_overlap(perm_true, perm_obs, k: int) -> float:
    """``|TopK(perm_true) & TopK(perm_obs)| / k`` for two rank vectors (ranks 1..N)."""
    a = as_permutation(perm_true)
    b = as_permutation(perm_obs, a.size)
    if int(k) != k or not 1 <= k <= a.size:
        raise ValueError(f"k must be an integer in [1, {a.size}], got {k!r}")
    k = int(k)
    return int(np.count_nonzero((a < k) & (b < k))) / k


def feasible_overlap_range(alpha: float) -> tuple[float, float]:
    """Open interval of overlaps the saddle equations can represent."""
    return (max(0.0, 2.0 - 1.0 / alpha), 1.0)


def _check_args(sigma, alpha):
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ValueError(f"sigma must be finite and positive, got {sigma!r}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")


def _log_abs_expm1(theta):
    theta = np.asarray(theta, dtype=float)
    out = np.where(
        theta > 0,
        theta + np.log(-np.expm1(-np.abs(theta))),
        np.log(-np.expm1(-np.abs(theta))),
    )
    return out


class _Exponent:
    """Integrals of the saddle-point exponent for fixed ``(q, sigma, alpha)``."""

    def __init__(self, q: ScoreDistribution, sigma: float, alpha: float):
        _check_args(sigma, alpha)
        self.q = q
        self.sigma = float(sigma)
        self.alpha = float(alpha)
        self.a, self.b = q.support
        self.r_alpha = q.quantile(alpha)
        self.scale = q.scale
        self._fine = np.arange(-12.0, 12.01, 1.5)

    def _rule(self, lo, hi, x):
        n_base = max(4, int(math.ceil((hi - lo) / (0.5 * self.scale))))
        base = np.linspace(lo, hi, n_base + 1)
        fine = x + self.sigma * self._fine
        fine = fine[(fine > lo) & (fine < hi)]
        bp = np.unique(np.concatenate([base, fine]))
        r, wts = gauss_legendre_panels(bp, PANEL_ORDER)
        return r, wts * self.q.pdf(r)

    def _region(self, top: bool, x):
        if top:
            return self._rule(self.r_alpha, self.b, x)
        return self._rule(self.a, self.r_alpha, x)

    def _terms(self, top: bool, x, theta):
        r, qw = self._region(top, x)
        z = (x - r) / self.sigma
        log_p = log_ndtr(z)
        log_1mp = log_ndtr(-z)
        # ln(1 + P (e^theta - 1)) = logaddexp(ln(1-P), ln P + theta)
        log_mix = np.logaddexp(log_1mp, log_p + theta)
        return r, qw, z, log_p, log_1mp, log_mix

    def gradient_parts(self, x, theta, top):
        """(int q P e^theta / (1 + P(e^theta-1)),  int q P_x (e^theta-1) / (1 + P(e^theta-1)))."""
        r, qw, z, log_p, log_1mp, log_mix = self._terms(top, x, theta)
        share = expit(theta + log_p - log_1mp)
        first = float(np.dot(qw, share))
        if theta == 0.0:
            return first, 0.0
        log_px = -0.5 * z * z - _LOG_SQRT_2PI - math.log(self.sigma)
        mag = np.exp(log_px + _log_abs_expm1(theta) - log_mix)
        second = math.copysign(1.0, theta) * float(np.dot(qw, mag))
        return first, second

    def g(self, x, theta, top):
        if theta == 0.0:
            return 0.0
        *_, qw, _, _, _, log_mix = self._terms(top, x, theta)
        return float(np.dot(qw, log_mix))

    def residual(self, v, f):
        x, tu, tw = v
        a = self.alpha
        t1, t3 = self.gradient_parts(x, tw, True)
        b1, b3 = self.gradient_parts(x, tu, False)
        return np.array([a * (1.0 - f) - t1, (1.0 - a) - a * (1.0 - f) - b1, t3 + b3])

    def value(self, v, f):
        x, tu, tw = v
        a = self.alpha
        return (
            (1.0 - a) * tu
            + a * (1.0 - f) * (tw - tu)
            - self.g(x, tw, True)
            - self.g(x, tu, False)
        )

    def noisy_quantile(self):
        """Threshold selecting an ``alpha`` fraction of noisy scores."""
        q, s = self.q, self.sigma
        if q.is_gaussian:
            return q.mean - math.hypot(q.sigma_q, s) * ndtri(self.alpha)

        def excess(x):
            r, qw = self._rule(self.a, self.b, x)
            return float(np.dot(qw, ndtr((x - r) / s))) - (1.0 - self.alpha)

        lo, hi = self.a - 10 * s, self.b + 10 * s
        return brentq(excess, lo, hi, xtol=1e-13)

    def implied_overlap(self, x):
        """Overlap for which ``(x, u=1, w=1)`` satisfies the first equation."""
        t1, _ = self.gradient_parts(x, 0.0, True)
        return 1.0 - t1 / self.alpha

    def x_scale(self):
        return self.sigma


def _jacobian(model: _Exponent, v, f, r0=None):
    rel = 1e-6
    scales = np.array([model.x_scale(), 1.0, 1.0])
    jac = np.empty((3, 3))
    for j in range(3):
        h = rel * max(abs(v[j]), scales[j])
        vp = v.copy()
        vm = v.copy()
        vp[j] += h
        vm[j] -= h
        jac[:, j] = (model.residual(vp, f) - model.residual(vm, f)) / (2.0 * h)
    return jac


def _newton(model: _Exponent, v0, f, max_iter=60):
    v = np.array(v0, dtype=float)
    res = model.residual(v, f)
    norm = float(np.linalg.norm(res))
    best = (norm, v.copy())
    for it in range(1, max_iter + 1):
        if norm <= RESIDUAL_TOL:
            return v, norm, it - 1, True
        jac = _jacobian(model, v, f)
        cond = np.linalg.cond(jac)
        if not np.isfinite(cond) or cond > 1e14:
            raise SingularJacobianError(
                f"singular Jacobian (cond={cond:.3g}) at x={v[0]:.6g}", best[0]
            )
        step = np.linalg.solve(jac, -res)
        cap = np.max(np.abs(step[1:])) / _THETA_STEP_CAP
        if cap > 1.0:
            step /= cap
        t = 1.0
        while True:
            trial = v + t * step
            tres = model.residual(trial, f)
            tnorm = float(np.linalg.norm(tres))
            if np.isfinite(tnorm) and tnorm <= (1.0 - 1e-4 * t) * norm:
                break
            t *= 0.5
            if t < 1e-10:
                return best[1], best[0], it, False
        v, res, norm = trial, tres, tnorm
        if norm < best[0]:
            best = (norm, v.copy())
    return best[1], best[0], max_iter, norm <= RESIDUAL_TOL


def _second_derivatives(model: _Exponent, v4, step):
    """Central-difference Hessian of F over (x, ln u, ln w, f)."""

    def F(p):
        return model.value(p[:3], p[3])

    n = 4
    hess = np.empty((n, n))
    f0 = F(v4)
    for i in range(n):
        e_i = np.zeros(n)
        e_i[i] = step[i]
        hess[i, i] = (F(v4 + e_i) - 2.0 * f0 + F(v4 - e_i)) / step[i] ** 2
        for j in range(i + 1, n):
            e_j = np.zeros(n)
            e_j[j] = step[j]
            val = (
                F(v4 + e_i + e_j) - F(v4 + e_i - e_j) - F(v4 - e_i + e_j) + F(v4 - e_i - e_j)
            ) / (4.0 * step[i] * step[j])
            hess[i, j] = hess[j, i] = val
    return hess


def _fd_steps(model: _Exponent, v4, rel=1e-4):
    _, tu, tw, f = v4
    # x moves on the noise scale, whatever its offset
    return np.array(
        [
            rel * model.x_scale(),
            rel * max(abs(tu), 1.0),
            rel * max(abs(tw), 1.0),
            rel * min(f, 1.0 - f),
        ]
    )


def _determinants(model: _Exponent, v, f):
    v4 = np.array([v[0], v[1], v[2], f])
    step = _fd_steps(model, v4)
    full = _second_derivatives(model, v4, step)
    half = _second_derivatives(model, v4, step / 2.0)
    det_h, det_r = np.linalg.det(full[:3, :3]), np.linalg.det(full)
    det_h2, det_r2 = np.linalg.det(half[:3, :3]), np.linalg.det(half)
    mismatch = max(abs(det_h - det_h2) / abs(det_h2), abs(det_r - det_r2) / abs(det_r2))
    return float(det_h), float(det_r), float(mismatch), full


def _finish(model, v, f, norm, iters, converged, with_determinants=True):
    det_h = det_r = mismatch = float("nan")
    hess = None
    if converged and with_determinants:
        det_h, det_r, mismatch, hess = _determinants(model, v, f)
    return SaddleSolution(
        x=float(v[0]),
        u=math.exp(v[1]),
        w=math.exp(v[2]),
        f=float(f),
        F_value=float(model.value(v, f)),
        det_H=det_h,
        det_R=det_r,
        converged=converged,
        residual_norm=float(norm),
        iterations=iters,
        fd_mismatch=mismatch,
        hessian=hess,
    )


def _check_feasible(alpha, f):
    lo, hi = feasible_overlap_range(alpha)
    if not lo < f < hi:
        raise ValueError(
            f"overlap f={f!r} is outside the feasible open interval ({lo:g}, {hi:g}) for alpha={alpha:g}"
        )


def _solve(model: _Exponent, f, start=None):
    """Stationary point for one ``f``; returns (v, norm, iterations).

    Cold starts begin at ``u = w = 1`` with ``x`` at the noisy-score quantile,
    which is the exact solution at the overlap it implies.  If Newton fails,
    the overlap is walked from that implied value to the target in
    successively finer steps, warm-starting every solve.
    """
    x0 = model.noisy_quantile()
    cold = np.array([x0, 0.0, 0.0])
    v0 = cold if start is None else np.asarray(start, dtype=float)
    best = math.inf
    try:
        v, norm, it, ok = _newton(model, v0, f)
        if ok:
            return v, norm, it
        best = norm
    except SingularJacobianError as exc:
        best = exc.best_residual if exc.best_residual is not None else best
    f_start = model.implied_overlap(x0)
    for n_steps in (4, 16, 64):
        v = cold.copy()
        total = 0
        ok = True
        for f_k in np.linspace(f_start, f, n_steps + 1)[1:]:
            try:
                v, norm, it, ok = _newton(model, v, f_k)
            except SingularJacobianError:
                ok = False
            total += it
            if not ok:
                best = min(best, norm)
                break
        if ok:
            return v, norm, total
    raise ConvergenceError(
        f"saddle solve did not converge at f={f:g} (best residual {best:.3g})", best
    )


def saddle_residual(q: ScoreDistribution, sigma: float, alpha: float, f: float, point) -> np.ndarray:
    """The three stationarity equations evaluated at ``point = (x, u, w)``.

    Components are (top-list misses, bottom-list misses, threshold balance),
    each as LHS - RHS.
    """
    x, u, w = (float(c) for c in point)
    if not (u > 0 and w > 0):
        raise ValueError(f"u and w must be positive, got u={u!r}, w={w!r}")
    model = _Exponent(q, sigma, alpha)
    return model.residual(np.array([x, math.log(u), math.log(w)]), f)


def solve_saddle(
    q: ScoreDistribution, sigma: float, alpha: float, f: float, start=None
) -> SaddleSolution:
    """Stationary point of F over (x, y, z) at fixed overlap ``f``.

    ``start`` optionally supplies a warm start ``(x, ln u, ln w)``.
    """
    _check_args(sigma, alpha)
    _check_feasible(alpha, f)
    model = _Exponent(q, sigma, alpha)
    v, norm, it = _solve(model, f, start)
    return _finish(model, v, f, norm, it, True)


def profile_exponent(q, sigma, alpha, f, start=None) -> tuple[float, np.ndarray]:
    """F at the saddle for overlap ``f`` together with the solved point."""
    model = _Exponent(q, sigma, alpha)
    _check_feasible(alpha, f)
    v, _, _ = _solve(model, f, start)
    return model.value(v, f), v


@lru_cache(maxsize=256)
def _mode(q: ScoreDistribution, sigma: float, alpha: float, xtol: float) -> SaddleSolution:
    model = _Exponent(q, sigma, alpha)
    lo_f, hi_f = feasible_overlap_range(alpha)
    solved: dict[float, np.ndarray] = {}

    def slope(f):
        # dF/df at the saddle (envelope theorem) is -alpha ln(w/u)
        near = min(solved, key=lambda g: abs(g - f)) if solved else None
        v, _, _ = _solve(model, f, None if near is None else solved[near])
        solved[f] = v
        return v[1] - v[2]

    # bracket outward from the overlap implied by the cold start (u = w = 1 at
    # the noisy-score quantile)
    tiny = 1e-12
    f_c = min(max(model.implied_overlap(model.noisy_quantile()), lo_f + tiny), hi_f - tiny)
    room = min(f_c - lo_f, hi_f - f_c)
    for j in range(12):
        d = min(room * 1e-4 * 4.0**j, 0.999 * room)
        lo, hi = f_c - d, f_c + d
        if slope(lo) <= 0.0 <= slope(hi):
            break
    else:
        raise ConvergenceError("could not bracket the overlap mode")
    # slope is increasing in f: negative below the mode, positive above
    f_root = brentq(slope, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)
    near = min(solved, key=lambda g: abs(g - f_root))
    v, norm, it = _solve(model, f_root, solved[near])
    return _finish(model, v, f_root, norm, it, True)


def mode_overlap(q: ScoreDistribution, sigma: float, alpha: float, xtol: float = 1e-9) -> float:
    """The overlap ``f0`` minimising the saddle exponent F(f)."""
    _check_args(sigma, alpha)
    return _mode(q, float(sigma), float(alpha), xtol).f


def mode_saddle(q: ScoreDistribution, sigma: float, alpha: float, xtol: float = 1e-9) -> SaddleSolution:
    _check_args(sigma, alpha)
    return _mode(q, float(sigma), float(alpha), xtol)


def overlap_moments(q: ScoreDistribution, sigma: float, alpha: float, n_objects: int) -> OverlapMoments:
    """Centre ``f0`` and variance ``|H| / (N |R|)`` of the Gaussian overlap law."""
    if int(n_objects) != n_objects or n_objects < 1:
        raise ValueError(f"n_objects must be a positive integer, got {n_objects!r}")
    sol = mode_saddle(q, sigma, alpha)
    if not (np.isfinite(sol.det_H) and np.isfinite(sol.det_R)) or sol.det_R == 0.0:
        raise ConvergenceError("overlap second-derivative determinants are not finite")
    cond = np.linalg.cond(sol.hessian)
    if cond > 1e13:
        raise ConvergenceError(f"near-singular second-derivative matrix (cond={cond:.3g})")
    var = abs(sol.det_H) / (int(n_objects) * abs(sol.det_R))
    return OverlapMoments(sol.f, var, float(alpha), int(n_objects), sol)


def overlap_variance(q: ScoreDistribution, sigma: float, alpha: float, n_objects: int) -> float:
    return overlap_moments(q, sigma, alpha, n_objects).sigma2_f


def _normal_mass(lo, hi):
    """``Phi(hi) - Phi(lo)`` without cancellation in either tail."""
    if lo > 0:
        return float(ndtr(-lo) - ndtr(-hi))
    return float(ndtr(hi) - ndtr(lo))


def _truncated(m: OverlapMoments):
    s = m.sigma_f
    lo, hi = (0.0 - m.f0) / s, (1.0 - m.f0) / s
    return s, lo, hi, _normal_mass(lo, hi)


def overlap_pdf(q, sigma, alpha, n_objects, f, moments: OverlapMoments | None = None):
    """Density of the overlap: Normal(f0, sigma_f^2) truncated to [0, 1] and renormalised."""
    m = moments or overlap_moments(q, sigma, alpha, n_objects)
    s, _, _, mass = _truncated(m)
    f = np.asarray(f, dtype=float)
    z = (f - m.f0) / s
    dens = np.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * s * mass)
    return np.where((f >= 0.0) & (f <= 1.0), dens, 0.0)


def overlap_cdf(q, sigma, alpha, n_objects, f, moments: OverlapMoments | None = None):
    m = moments or overlap_moments(q, sigma, alpha, n_objects)
    s, lo, _, mass = _truncated(m)
    f = np.clip(np.asarray(f, dtype=float), 0.0, 1.0)
    z = (f - m.f0) / s
    return np.vectorize(lambda zz: _normal_mass(lo, zz) / mass)(z)


def overlap_mean(q, sigma, alpha, n_objects, moments: OverlapMoments | None = None) -> float:
    """Mean of the truncated overlap law (differs from f0 only near 0 or 1)."""
    m = moments or overlap_moments(q, sigma, alpha, n_objects)
    s, lo, hi, mass = _truncated(m)
    phi = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
    return m.f0 + s * (phi(lo) - phi(hi)) / mass


def overlap_reliability(q, sigma, alpha, n_objects, epsilon, moments: OverlapMoments | None = None) -> float:
    """``Pr(f >= 1 - epsilon)`` under the truncated Gaussian overlap law."""
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon!r}")
    t = 1.0 - epsilon
    if t <= 0.0:
        return 1.0
    m = moments or overlap_moments(q, sigma, alpha, n_objects)
    s, _, hi, mass = _truncated(m)
    p = _normal_mass((t - m.f0) / s, hi) / mass
    return min(max(p, 0.0), 1.0)
