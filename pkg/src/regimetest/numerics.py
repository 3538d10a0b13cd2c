"""Small numerical kernels: rank-revealing pseudo-inverse and chi-square tail."""
from __future__ import annotations

import math

import numpy as np

from .errors import AllZeroMatrix

__all__ = ["pinv_rank", "chi2_sf", "gamma_q", "DEFAULT_RANK_TOL"]

DEFAULT_RANK_TOL = 1e-8


def pinv_rank(S, tol: float = DEFAULT_RANK_TOL, floor: float = 0.0):
    """Moore-Penrose inverse of a symmetric matrix and its numerical rank.

    Eigenvalues not exceeding ``tol * lambda_max`` are treated as zero, which
    also discards any negative eigenvalues.  ``floor`` is an absolute level:
    when even the largest eigenvalue does not exceed it the matrix counts as
    zero (useful when the entries are known to carry rounding noise of that
    size).

    Returns
    -------
    (pinv, rank, n_negative) : tuple
        ``n_negative`` counts eigenvalues below ``-tol * lambda_max``; such
        values can appear after a finite-sample covariance correction and are
        reported so callers can warn.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("pinv_rank needs a square matrix")
    if S.size == 0:
        raise AllZeroMatrix("empty matrix")
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    top = vals[-1]
    if not np.isfinite(top) or top <= max(floor, 0.0):
        raise AllZeroMatrix("matrix has no eigenvalue above rounding level (rank 0)")
    cut = tol * top
    keep = vals > cut
    rank = int(keep.sum())
    kept = vecs[:, keep]
    pinv = (kept / vals[keep]) @ kept.T
    n_negative = int((vals < -cut).sum())
    return pinv, rank, n_negative


# ---------------------------------------------------------------------------
# Regularised incomplete gamma
# ---------------------------------------------------------------------------

_EPS = 1e-16
_TINY = 1e-300
_MAX_TERMS = 10_000


def _gamma_p_series(a: float, x: float) -> float:
    # P(a, x) = x^a e^{-x} / Gamma(a+1) * sum_k x^k / ((a+1)...(a+k))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_TERMS):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_fraction(a: float, x: float) -> float:
    # Modified Lentz evaluation of the continued fraction for Q(a, x).
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_TERMS):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_q(a: float, x: float) -> float:
    """Upper regularised incomplete gamma function ``Q(a, x)``."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(0.0, min(1.0, 1.0 - _gamma_p_series(a, x)))
    return max(0.0, min(1.0, _gamma_q_fraction(a, x)))


def chi2_sf(x: float, nu: int) -> float:
    """Upper tail probability of a chi-square variable with ``nu`` degrees of freedom."""
    if nu < 1:
        raise ValueError("nu must be a positive integer")
    if x < 0 or math.isnan(x):
        raise ValueError("x must be nonnegative")
    return gamma_q(0.5 * nu, 0.5 * x)
