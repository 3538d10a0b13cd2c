"""Weighted logrank test comparing survival across a set of treatment regimes.

Pipeline (all integrals are sums over the event grid up to the truncation
time ``L``)::

    weights -> baseline hazard increments -> score vector
            -> per-subject influence terms -> covariance (optionally corrected)
            -> generalized inverse -> chi-square statistic and p-value

The last regime in the supplied list is the reference; the score vector has
one entry for each of the others.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .augmentation import BasisSpec, build_design_matrix, residualize
from .cohort import Cohort, event_grid, truncation_time
from .correction import corrected_covariance, g_terms
from .errors import ConfigError
from .numerics import DEFAULT_RANK_TOL, chi2_sf, pinv_rank
from .propensity import FittedPropensity, PropensitySpec, fit_propensity
from .weights import WeightTable, build_weights

log = logging.getLogger(__name__)

__all__ = [
    "TestOptions", "TestResult", "TestComponents", "SurvivalCurve", "VARIANTS",
    "baseline_hazard", "qhat", "score_statistic", "iid_terms", "covariance",
    "compute_components", "quadratic_test", "run_test", "regime_cumhaz",
    "resolve_variant",
]

VARIANTS = ("auto", "plain", "estimated-gamma", "augmented")


# ---------------------------------------------------------------------------
# Building blocks on a weight table
# ---------------------------------------------------------------------------

def baseline_hazard(weights: WeightTable) -> np.ndarray:
    """Increments of the common cumulative hazard under the null, shape (G,)."""
    total = weights.omega.sum(axis=0)
    den = total.sum(axis=0)
    num = np.zeros(weights.grid.size)
    has = weights.event_index >= 0
    np.add.at(num, weights.event_index[has], total[has, weights.event_index[has]])
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / den, 0.0)


def qhat(weights: WeightTable) -> np.ndarray:
    """Share of the weighted risk set belonging to each regime, shape (D, G)."""
    per_regime = weights.omega.sum(axis=1)          # (D, G)
    den = per_regime.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, per_regime / den, 0.0)


def _martingale(weights: WeightTable, dLambda: np.ndarray) -> np.ndarray:
    return weights.dN() - dLambda[None, :] * weights.at_risk


def score_statistic(weights: WeightTable, dLambda: np.ndarray | None = None) -> np.ndarray:
    """Score vector, one entry per non-reference regime."""
    if dLambda is None:
        dLambda = baseline_hazard(weights)
    dM = _martingale(weights, dLambda)
    D1 = weights.D - 1
    return np.einsum("jnu,nu->j", weights.omega[:D1], dM)


def iid_terms(weights: WeightTable, dLambda: np.ndarray | None = None,
              q: np.ndarray | None = None) -> np.ndarray:
    """Per-subject influence terms, shape ``(n, D-1)``; columns sum to the score."""
    if dLambda is None:
        dLambda = baseline_hazard(weights)
    if q is None:
        q = qhat(weights)
    dM = _martingale(weights, dLambda)
    D1 = weights.D - 1
    total = weights.omega.sum(axis=0)
    direct = np.einsum("jnu,nu->nj", weights.omega[:D1], dM)
    return direct - (total * dM) @ q[:D1].T


def covariance(iid: np.ndarray) -> np.ndarray:
    """Average outer product of the influence terms."""
    iid = np.asarray(iid, dtype=float)
    n = iid.shape[0]
    if n < 1:
        raise ValueError("need at least one subject")
    out = iid.T @ iid / n
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# Options, results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestOptions:
    __test__ = False  # not a pytest test class
    propensity: PropensitySpec = field(default_factory=PropensitySpec)
    basis: BasisSpec = field(default_factory=BasisSpec)
    correction: bool = True
    L: float | None = None
    at_risk_fraction: float = 0.02
    rank_tol: float = DEFAULT_RANK_TOL
    variant: str = "auto"

    def replace(self, **changes) -> "TestOptions":
        return dataclasses.replace(self, **changes)


@dataclass
class TestResult:
    __test__ = False  # not a pytest test class
    statistic: float
    nu: int
    p_value: float
    variant: str
    corrected: bool
    components: list
    rank_tolerance: float
    L: float
    n: int
    dropped_grid_points: int = 0
    negative_eigenvalues: int = 0
    config: dict | None = None

    @property
    def variant_label(self) -> str:
        return self.variant + ("+corrected" if self.corrected else "")

    def to_dict(self) -> dict:
        out = {
            "statistic": self.statistic,
            "nu": self.nu,
            "p_value": self.p_value,
            "variant": self.variant_label,
            "components": list(self.components),
            "rank_tolerance": self.rank_tolerance,
            "L": self.L,
            "n": self.n,
            "warnings": {"dropped_grid_points": self.dropped_grid_points,
                         "negative_eigenvalues": self.negative_eigenvalues},
        }
        if self.config is not None:
            out["config"] = self.config
        return out


@dataclass
class TestComponents:
    """Everything the test variants share for one cohort and regime set."""

    __test__ = False

    weights: WeightTable
    dLambda: np.ndarray
    qhat: np.ndarray
    scores: np.ndarray
    iid: np.ndarray
    G: np.ndarray
    L: float
    noise: float = 0.0

    @property
    def n(self) -> int:
        return self.iid.shape[0]


def compute_components(cohort: Cohort, regimes: Sequence, fitted: FittedPropensity,
                       L: float) -> TestComponents:
    if len(regimes) < 2:
        raise ConfigError("the test needs at least two regimes")
    weights = build_weights(cohort, regimes, fitted, L)
    if weights.dropped:
        log.info("dropped %d grid point(s) with no weighted risk set", weights.dropped)
    dL = baseline_hazard(weights)
    q = qhat(weights)
    scores = score_statistic(weights, dL)
    iid = iid_terms(weights, dL, q)
    G = g_terms(weights, q, dL)
    return TestComponents(weights, dL, q, scores, iid, G, L, rounding_level(weights, dL))


# Influence terms are differences of sums whose pieces are bounded by the
# subject's total weight times its martingale increment.  Cancellation in
# those differences leaves rounding residue of a few ulps of that size, so a
# covariance whose largest eigenvalue is below the squared residue level is
# indistinguishable from zero (e.g. two regimes with identical rules).
_ROUNDING_FACTOR = 1e4


def rounding_level(weights: WeightTable, dLambda: np.ndarray) -> float:
    """Typical rounding error of one influence-term entry."""
    total = weights.omega.sum(axis=0)
    size = np.abs(total * _martingale(weights, dLambda)).sum(axis=1)
    if size.size == 0:
        return 0.0
    return float(_ROUNDING_FACTOR * np.finfo(float).eps * np.sqrt(np.mean(size ** 2)))


def quadratic_test(total: np.ndarray, iid: np.ndarray, G: np.ndarray | None,
                   corrected: bool, tol: float = DEFAULT_RANK_TOL, noise: float = 0.0):
    """``(statistic, nu, p_value, n_negative)`` for score ``total`` and influence terms ``iid``.

    ``noise`` is the rounding level of an influence-term entry; a covariance
    with no eigenvalue above ``noise**2`` is reported as all-zero.
    """
    n = iid.shape[0]
    sigma = covariance(iid)
    if corrected:
        sigma = corrected_covariance(sigma, iid, G, n)
    pinv, nu, n_neg = pinv_rank(sigma, tol, floor=noise * noise)
    stat = float(total @ pinv @ total) / n
    stat = max(stat, 0.0)
    return stat, nu, chi2_sf(stat, nu), n_neg


def resolve_variant(variant: str, propensity: PropensitySpec, basis: BasisSpec) -> str:
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, not {variant!r}")
    if variant == "auto":
        if propensity.mode == "known":
            return "plain"
        return "estimated-gamma" if basis.empty else "augmented"
    if variant in ("estimated-gamma", "augmented") and propensity.mode == "known":
        raise ConfigError(f"variant {variant} needs an estimated propensity model")
    return variant


def run_test(cohort: Cohort, regimes: Sequence, options: TestOptions | None = None,
             config_echo: dict | None = None) -> TestResult:
    """Full test for one cohort and regime list (last regime = reference)."""
    options = options or TestOptions()
    if len(regimes) < 2:
        raise ConfigError("the test needs at least two regimes")
    variant = resolve_variant(options.variant, options.propensity, options.basis)
    options.basis.validate(cohort.design)
    fitted = fit_propensity(cohort, options.propensity)
    L = options.L if options.L is not None else truncation_time(cohort, options.at_risk_fraction)
    comps = compute_components(cohort, regimes, fitted, L)
    if variant == "plain":
        iid, total = comps.iid, comps.scores
    else:
        basis = options.basis if variant == "augmented" else BasisSpec()
        X = build_design_matrix(cohort, fitted, basis)
        iid = residualize(comps.iid, X)
        total = iid.sum(axis=0)
    stat, nu, p, n_neg = quadratic_test(total, iid, comps.G, options.correction, options.rank_tol,
                                        comps.noise)
    if n_neg:
        log.warning("corrected covariance has %d negative eigenvalue(s); treated as zero", n_neg)
    return TestResult(statistic=stat, nu=nu, p_value=p, variant=variant,
                      corrected=options.correction, components=[float(x) for x in total],
                      rank_tolerance=options.rank_tol, L=float(L), n=cohort.n,
                      dropped_grid_points=comps.weights.dropped, negative_eigenvalues=n_neg,
                      config=config_echo)


# ---------------------------------------------------------------------------
# Regime-specific survival
# ---------------------------------------------------------------------------

@dataclass
class SurvivalCurve:
    """Step functions starting at time 0 (cumulative hazard 0, survival 1)."""

    label: str
    time: np.ndarray
    cumhaz: np.ndarray
    survival: np.ndarray
    dropped: int = 0

    def to_csv(self) -> str:
        from .cohort import format_number

        lines = ["time,cumhaz,survival"]
        for t, h, s in zip(self.time, self.cumhaz, self.survival):
            lines.append(f"{format_number(t)},{format_number(h)},{format_number(s)}")
        return "\n".join(lines) + "\n"


def regime_cumhaz(cohort: Cohort, regime, fitted: FittedPropensity,
                  grid: np.ndarray | None = None, L: float | None = None) -> SurvivalCurve:
    """Weighted Nelson-Aalen estimate of the cumulative hazard under ``regime``."""
    if grid is None:
        if L is None:
            L = float(cohort.u.max())
        try:
            grid = event_grid(cohort, L)
        except Exception:
            grid = np.zeros(0)
    label = getattr(regime, "label", "")
    if np.size(grid) == 0:
        return SurvivalCurve(label, np.zeros(1), np.zeros(1), np.ones(1))
    weights = build_weights(cohort, [regime], fitted, L=float(np.max(grid)), grid=grid)
    w = weights.omega[0]
    den = w.sum(axis=0)
    num = np.zeros(weights.grid.size)
    has = weights.event_index >= 0
    np.add.at(num, weights.event_index[has], w[has, weights.event_index[has]])
    inc = num / den
    cum = np.concatenate([[0.0], np.cumsum(inc)])
    time = np.concatenate([[0.0], weights.grid])
    return SurvivalCurve(label, time, cum, np.exp(-cum), dropped=weights.dropped)
