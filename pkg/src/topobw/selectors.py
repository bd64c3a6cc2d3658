"""Classical bandwidth selectors: reference rules, cross-validation and ISJ.

All selectors return a single scalar bandwidth for an isotropic Gaussian
kernel. ``sigma_pool`` is the mean of the per-axis sample standard deviations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct
from scipy.optimize import brentq
from scipy.spatial.distance import pdist, squareform

from ._validation import check_points

REFERENCE_RULES = ("scott", "silverman", "nrr")
CV_KINDS = ("mlcv", "lscv", "bcv")
METHODS = REFERENCE_RULES + CV_KINDS + ("isj",)

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class SelectorError(RuntimeError):
    """A selector could not produce a bandwidth; ``diagnostics`` says why."""

    def __init__(self, method, diagnostics):
        super().__init__(f"{method}: {diagnostics}")
        self.method = method
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class SelectorResult:
    method: str
    h: float
    wall_time_seconds: float
    diagnostics: str | None = None

    def __post_init__(self):
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValueError(f"bandwidth must be positive and finite, got {self.h}")


def sigma_pool(points):
    X = check_points(points)
    if X.shape[0] < 2:
        raise ValueError("need at least two points for a sample standard deviation")
    sd = X.std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise ValueError("sample has zero variance along some axis")
    return float(sd.mean())


def reference_rule(kind, points):
    """Closed-form normal-reference bandwidths.

    ``scott``: ``sigma_pool * n**(-1/(d+4))``. ``silverman`` in 1D:
    ``0.9 * min(sigma, IQR/1.34) * n**(-1/5)``; otherwise identical to
    ``nrr``: ``sigma_pool * (4/(d+2))**(1/(d+4)) * n**(-1/(d+4))``.
    """
    if kind not in REFERENCE_RULES:
        raise ValueError(f"unknown reference rule {kind!r}")
    start = time.perf_counter()
    X = check_points(points, min_samples=2)
    n, d = X.shape
    sigma = sigma_pool(X)
    if kind == "scott":
        h = sigma * n ** (-1.0 / (d + 4))
    elif kind == "silverman" and d == 1:
        q75, q25 = np.percentile(X[:, 0], [75, 25])
        spread = min(sigma, (q75 - q25) / 1.34) if q75 > q25 else sigma
        h = 0.9 * spread * n ** (-0.2)
    else:
        h = sigma * (4.0 / (d + 2)) ** (1.0 / (d + 4)) * n ** (-1.0 / (d + 4))
    return SelectorResult(kind, float(h), time.perf_counter() - start)


# ---------------------------------------------------------------- cross-validation


def default_h_grid(points, n_values=40, span=(0.1, 10.0)):
    """Log-spaced bandwidths around Scott's rule, ``span`` times it at each end."""
    X = check_points(points, min_samples=2)
    n, d = X.shape
    ref = sigma_pool(X) * n ** (-1.0 / (d + 4))
    return np.geomspace(span[0] * ref, span[1] * ref, n_values)


class _CVObjective:
    """Cross-validation objectives of ``h`` (lower is better) for a fixed sample."""

    def __init__(self, kind, X):
        self.kind = kind
        self.n, self.d = X.shape
        if kind == "mlcv":
            # Leave-one-out sums exclude the diagonal; shifting each row by its
            # nearest-neighbour distance keeps the exponentials in range.
            sq = squareform(pdist(X, "sqeuclidean"))
            np.fill_diagonal(sq, np.inf)
            self.nearest = sq.min(axis=1)
            sq -= self.nearest[:, None]
            self.shifted = sq
        else:
            self.sq_pairs = pdist(X, "sqeuclidean")

    def __call__(self, h):
        return getattr(self, "_" + self.kind)(h)

    def _mlcv(self, h):
        n, d = self.n, self.d
        s = np.exp(self.shifted * (-0.5 / (h * h))).sum(axis=1)
        loo = (np.log(s) - self.nearest / (2 * h * h) - np.log(n - 1) - d * np.log(h)
               - 0.5 * d * np.log(2 * np.pi))
        return -float(np.sum(loo))

    def _lscv(self, h):
        n, d = self.n, self.d
        r2 = self.sq_pairs
        # Pair sums over i < j; the i == j terms are added explicitly.
        s2 = np.exp(-r2 / (4 * h * h)).sum()
        s1 = np.exp(-r2 / (2 * h * h)).sum()
        norm2 = (4 * np.pi * h * h) ** (-d / 2)
        norm1 = (2 * np.pi * h * h) ** (-d / 2)
        int_sq = norm2 * (n + 2 * s2) / n ** 2
        loo = norm1 * 2 * s1 / (n * (n - 1))
        return float(int_sq - 2 * loo)

    def _bcv(self, h):
        n, d = self.n, self.d
        r2 = self.sq_pairs
        phi = np.exp(-r2 / (4 * h * h)) * (4 * np.pi * h * h) ** (-d / 2)
        lap2 = phi * (r2 ** 2 / (16 * h ** 8) - 2 * (d + 2) * r2 / (8 * h ** 6)
                      + d * (d + 2) / (4 * h ** 4))
        roughness = 2 * lap2.sum() / (n * (n - 1))
        return float((4 * np.pi) ** (-d / 2) / (n * h ** d) + h ** 4 / 4 * roughness)


def _golden_section(fun, lo, hi, rtol):
    """Minimise ``fun`` over ``[lo, hi]`` in log space to relative width ``rtol``."""
    a, b = np.log(lo), np.log(hi)
    c = b - _GOLDEN * (b - a)
    e = a + _GOLDEN * (b - a)
    fc, fe = fun(np.exp(c)), fun(np.exp(e))
    while b - a > np.log1p(rtol):
        if fc <= fe:
            b, e, fe = e, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(np.exp(c))
        else:
            a, c, fc = c, e, fe
            e = a + _GOLDEN * (b - a)
            fe = fun(np.exp(e))
    return (np.exp(c), fc) if fc <= fe else (np.exp(e), fe)


def cross_validate(kind, points, h_grid=None, rtol=1e-4):
    """Cross-validated bandwidth, grid search then golden-section refinement.

    ``mlcv`` maximises the leave-one-out log-likelihood, ``lscv`` minimises the
    least-squares criterion ``int f^2 - (2/n) sum f_{-i}(x_i)`` and ``bcv``
    minimises the biased-CV estimate of the asymptotic MISE. The best grid
    point (ties to the smaller ``h``) and its neighbours bracket the
    refinement.

    Raises
    ------
    SelectorError
        If the objective is non-finite on the whole grid.
    """
    if kind not in CV_KINDS:
        raise ValueError(f"unknown cross-validation kind {kind!r}")
    start = time.perf_counter()
    X = check_points(points, min_samples=3)
    grid = default_h_grid(X) if h_grid is None else np.asarray(h_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("h_grid must be a non-empty, strictly increasing positive sequence")
    objective = _CVObjective(kind, X)
    with np.errstate(all="ignore"):
        values = np.array([objective(h) for h in grid])
    finite = np.isfinite(values)
    if not finite.any():
        raise SelectorError(kind, f"objective non-finite on all {grid.size} grid values "
                                  f"[{grid[0]:.4g}, {grid[-1]:.4g}]")
    best = int(np.argmin(np.where(finite, values, np.inf)))
    notes = []
    if best in (0, grid.size - 1) and grid.size > 1:
        notes.append(f"optimum at grid {'lower' if best == 0 else 'upper'} edge")
    h, value = grid[best], values[best]
    if grid.size > 1:
        lo, hi = grid[max(best - 1, 0)], grid[min(best + 1, grid.size - 1)]

        def safe(x):
            with np.errstate(all="ignore"):
                v = objective(x)
            return v if np.isfinite(v) else np.inf

        h_ref, v_ref = _golden_section(safe, lo, hi, rtol)
        if v_ref < value:
            h, value = h_ref, v_ref
    if not finite.all():
        notes.append(f"{int((~finite).sum())} non-finite grid values")
    return SelectorResult(kind, float(h), time.perf_counter() - start,
                          "; ".join(notes) or None)


# ---------------------------------------------------------------- ISJ

ISJ_MIN_SAMPLES = 50
_ISJ_STAGES = 7


def _isj_fixed_point(t, n, k2, a2):
    """``t - xi * gamma^[l](t)`` from the improved Sheather-Jones recursion."""
    ell = _ISJ_STAGES
    f = 2 * np.pi ** (2 * ell) * np.sum(k2 ** ell * a2 * np.exp(-k2 * np.pi ** 2 * t))
    for s in range(ell - 1, 1, -1):
        k0 = np.prod(np.arange(1, 2 * s, 2)) / np.sqrt(2 * np.pi)
        const = (1 + 0.5 ** (s + 0.5)) / 3
        t_s = (2 * const * k0 / (n * f)) ** (2 / (3 + 2 * s))
        f = 2 * np.pi ** (2 * s) * np.sum(k2 ** s * a2 * np.exp(-k2 * np.pi ** 2 * t_s))
    return t - (2 * n * np.sqrt(np.pi) * f) ** (-0.4)


def isj_1d(points, mesh_size=2 ** 14):
    """Improved Sheather-Jones plug-in bandwidth (1D only).

    The sample is binned onto ``mesh_size`` bins spanning the data range
    extended by a tenth on each side, the binned density is cosine
    transformed, and the fixed point ``t = xi * gamma(t)`` is solved by a
    bracketed root search. The bandwidth is ``sqrt(t)`` times the mesh range.
    If no bracket is found, Silverman's rule is returned and flagged.
    """
    start = time.perf_counter()
    X = check_points(points, dim=1)
    if X.shape[0] < ISJ_MIN_SAMPLES:
        raise ValueError(f"isj needs at least {ISJ_MIN_SAMPLES} points, got {X.shape[0]}")
    x = X[:, 0]
    lo, hi = x.min(), x.max()
    span = hi - lo
    if span <= 0:
        raise ValueError("sample has zero range")
    lo, hi = lo - span / 10, hi + span / 10
    r = hi - lo
    n = np.unique(x).size
    hist, _ = np.histogram(x, bins=mesh_size, range=(lo, hi))
    hist = hist / hist.sum()
    a = dct(hist, type=2)
    k2 = np.arange(1, mesh_size, dtype=float) ** 2
    a2 = (a[1:] / 2) ** 2
    with np.errstate(all="ignore"):
        for upper in 0.1 * 2.0 ** np.arange(6):
            try:
                t = brentq(_isj_fixed_point, 0.0, upper, args=(n, k2, a2), xtol=1e-14,
                           rtol=1e-12)
            except ValueError:
                continue
            if t > 0:
                return SelectorResult("isj", float(np.sqrt(t) * r), time.perf_counter() - start)
    fallback = reference_rule("silverman", X)
    return SelectorResult("isj", fallback.h, time.perf_counter() - start,
                          "fixed point not bracketed; fell back to silverman")


def select(method, points, **kwargs):
    """Dispatch to the selector named ``method``."""
    if method in REFERENCE_RULES:
        return reference_rule(method, points)
    if method in CV_KINDS:
        return cross_validate(method, points, **kwargs)
    if method == "isj":
        return isj_1d(points, **kwargs)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
