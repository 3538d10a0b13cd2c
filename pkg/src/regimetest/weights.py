"""Inverse-probability weights of each subject for each regime on the event grid.

For subject ``i``, regime ``j`` and grid time ``u`` the weight is::

    omega[j, i, u] = C_i(u, d_j) * I(U_i >= u) / pi_i(u, d_j)

where the consistency indicator ``C`` and the propensity product ``pi`` only
involve the stages whose decision time is at or before ``u``.  Where the
subject is consistent with the regime the regime's choice equals the received
treatment, so ``pi`` is the product of the probabilities of the treatments
actually received.  Those probabilities are clipped to ``[1e-6, 1 - 1e-6]``
here and nowhere else.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import Cohort, counting_views, event_grid
from .errors import PositivityViolation
from .propensity import FittedPropensity

__all__ = ["WeightTable", "build_weights", "omega", "PROB_CLIP", "stage_matches"]

PROB_CLIP = 1e-6


@dataclass
class WeightTable:
    """Weights ``omega`` with shape ``(D, n, G)`` plus the counting-process views.

    ``at_risk`` is ``Y_i(u)`` (n, G) and ``event_index[i]`` is the grid column
    of subject i's event, or -1 when the subject has no event on the grid.
    ``dropped`` counts grid points removed because no subject carried weight
    there.
    """

    grid: np.ndarray
    omega: np.ndarray
    at_risk: np.ndarray
    event_index: np.ndarray
    dropped: int = 0

    @property
    def n(self) -> int:
        return self.omega.shape[1]

    @property
    def D(self) -> int:
        return self.omega.shape[0]

    def dN(self) -> np.ndarray:
        """Event counting increments ``dN_i(u)`` as a dense (n, G) array."""
        out = np.zeros(self.at_risk.shape)
        has = self.event_index >= 0
        out[np.flatnonzero(has), self.event_index[has]] = 1.0
        return out

    def total(self) -> np.ndarray:
        """Sum of the weights over regimes, ``(n, G)``."""
        return self.omega.sum(axis=0)


def stage_matches(cohort: Cohort, regimes) -> np.ndarray:
    """``(D, K, n)`` booleans: received treatment equals the regime's choice.

    Entries for stages a subject never reached are True (they do not enter
    the consistency product).
    """
    env = cohort.env()
    K = cohort.design.K
    out = np.ones((len(regimes), K, cohort.n), dtype=bool)
    for j, regime in enumerate(regimes):
        codes = regime.codes(env, cohort.kappa)
        for k in range(K):
            reached = cohort.kappa > k
            out[j, k] = np.where(reached, codes[k] == cohort.treatments[k], True)
    return out


def _received_probabilities(cohort: Cohort, fitted: FittedPropensity) -> np.ndarray:
    """``(K, n)`` probability of the received treatment, 1 where unreached."""
    K = cohort.design.K
    probs = np.ones((K, cohort.n))
    for k in range(1, K + 1):
        reached = cohort.kappa >= k
        p = fitted.observed_probability(cohort, k)
        bad = reached & ~(p > 0)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise PositivityViolation(
                f"subject {cohort.ids[i]}: received treatment a{k}={cohort.treatments[k - 1, i]} "
                "has probability 0")
        probs[k - 1] = np.where(reached, np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP), 1.0)
    return probs


def build_weights(cohort: Cohort, regimes, fitted: FittedPropensity, L: float,
                  grid: np.ndarray | None = None) -> WeightTable:
    """Weight table on the event grid up to ``L``.

    Grid points where every weight vanishes are dropped and counted.
    """
    if grid is None:
        grid = event_grid(cohort, L)
    grid = np.asarray(grid, dtype=float)
    matches = stage_matches(cohort, regimes)
    probs = _received_probabilities(cohort, fitted)
    at_risk = cohort.u[:, None] >= grid[None, :]
    D, K, n, G = len(regimes), cohort.design.K, cohort.n, grid.size
    omega = np.empty((D, n, G))
    # Stage 1 is decided at time 0, so its factor never changes along the grid.
    reached_by = [cohort.times[k][:, None] <= grid[None, :] for k in range(1, K)]
    for j in range(D):
        base = matches[j, 0] / probs[0]
        w = np.where(at_risk, base[:, None], 0.0)
        for k in range(1, K):
            factor = matches[j, k] / probs[k]
            w = np.where(reached_by[k - 1], w * factor[:, None], w)
        omega[j] = w
    total = omega.sum(axis=(0, 1))
    keep = total > 0
    dropped = int((~keep).sum())
    if dropped:
        grid = grid[keep]
        omega = omega[:, :, keep]
        at_risk = at_risk[:, keep]
    event_index = np.full(n, -1, dtype=np.int64)
    has = cohort.delta == 1
    pos = np.searchsorted(grid, cohort.u)
    hit = has & (pos < grid.size)
    hit[hit] = grid[pos[hit]] == cohort.u[hit]
    event_index[hit] = pos[hit]
    return WeightTable(grid=grid, omega=omega, at_risk=at_risk, event_index=event_index,
                       dropped=dropped)


def omega(subject, regime, u: float, prop) -> float:
    """Weight of one subject for one regime at time ``u`` (scalar reference form)."""
    from .rules import consistency_indicator, propensity_product

    _, y = counting_views(subject, u)
    if y == 0:
        return 0.0
    if consistency_indicator(subject, regime, u) == 0:
        return 0.0
    return 1.0 / propensity_product(subject, regime, u, prop)
