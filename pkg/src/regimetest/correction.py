"""Second-order (order 1/n) bias correction of the covariance estimate.

The plain covariance estimate of the score vector understates its
variability in moderate samples.  The correction adds::

    (1/n) * [ (1/n) * sum_i ( 2 T_i G_i' + 2 G_i T_i' ) ]

where ``T_i`` are the per-subject influence terms and ``G_i`` accumulates,
over the grid, the centred regime weights times the subject's total weight
times its martingale increment, divided by the average total weight at risk.
"""
from __future__ import annotations

import numpy as np

from .weights import WeightTable

__all__ = ["g_terms", "corrected_covariance", "correction_term"]


def g_terms(weights: WeightTable, qhat: np.ndarray, dLambda: np.ndarray) -> np.ndarray:
    """Per-subject correction vectors, shape ``(n, D-1)``.

    Parameters
    ----------
    weights : WeightTable
    qhat : (D, G) array
        Share of the weighted risk set held by each regime.
    dLambda : (G,) array
        Baseline hazard increments.
    """
    omega = weights.omega
    n = weights.n
    total = omega.sum(axis=0)                       # (n, G), already includes Y
    dM = weights.dN() - dLambda[None, :] * weights.at_risk
    mean_total = total.sum(axis=0) / n              # (G,)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mean_total > 0, 1.0 / mean_total, 0.0)
    W = total * dM * scale[None, :]                 # (n, G)
    D1 = omega.shape[0] - 1
    direct = np.einsum("jnu,nu->nj", omega[:D1], W)
    centred = (total * W) @ qhat[:D1].T
    return direct - centred


def correction_term(iid: np.ndarray, G: np.ndarray) -> np.ndarray:
    """The additive correction ``n^-2 * sum_i (2 T_i G_i' + 2 G_i T_i')``."""
    iid = np.asarray(iid, dtype=float)
    G = np.asarray(G, dtype=float)
    n = iid.shape[0]
    cross = iid.T @ G
    out = 2.0 * (cross + cross.T) / (n * n)
    return 0.5 * (out + out.T)


def corrected_covariance(sigma: np.ndarray, iid: np.ndarray, G: np.ndarray,
                         n: int | None = None) -> np.ndarray:
    """Bias-corrected covariance; symmetric to machine precision."""
    iid = np.asarray(iid, dtype=float)
    G = np.asarray(G, dtype=float)
    if iid.shape != G.shape:
        raise ValueError("influence terms and correction vectors must have the same shape")
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (iid.shape[1], iid.shape[1]):
        raise ValueError("covariance matrix dimension does not match the influence terms")
    n = iid.shape[0] if n is None else n
    cross = iid.T @ G
    out = sigma + 2.0 * (cross + cross.T) / (n * n)
    return 0.5 * (out + out.T)
