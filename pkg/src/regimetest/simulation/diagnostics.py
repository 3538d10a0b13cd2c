"""Closed-form hazards showing when the at-risk martingale structure breaks.

Two toy generative laws are covered, both under the null with no covariate
effects:

* ``responder``: event before response at rate ``lambda1`` for the
  non-responding fraction, response at rate ``lambda2`` and event after
  response at rate ``lambda3`` for the responding fraction ``pi_r``.
* ``competing``: death at rate ``lambda1`` competes with reaching the second
  decision at rate ``lambda2``; after that decision the event rate is
  ``lambda3``.

Every formula is rescaled by the slowest exponential so that long grids
do not underflow to 0/0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, SingularParameterization

__all__ = ["HazardCurves", "prior_response_hazard", "responder_regime_hazard",
           "competing_regime_hazard", "hazard_diagnostics", "scenario_rates"]


def _check_rates(*rates):
    for r in rates:
        if not (np.isfinite(r) and r > 0):
            raise ConfigError("hazard rates must be positive and finite")


def _grid(u) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any(~np.isfinite(u)) or np.any(u < 0):
        raise ConfigError("hazard grid must hold finite non-negative times")
    return u


def prior_response_hazard(lambda1: float, lambda2: float, pi_r: float, u) -> np.ndarray:
    """Hazard of an event before response in the responder law."""
    _check_rates(lambda1, lambda2)
    if not 0 <= pi_r < 1:
        raise ConfigError("pi_r must lie in [0, 1)")
    u = _grid(u)
    m = min(lambda1, lambda2)
    a = (1 - pi_r) * np.exp(-(lambda1 - m) * u)
    b = pi_r * np.exp(-(lambda2 - m) * u)
    return lambda1 * a / (a + b)


def responder_regime_hazard(lambda1: float, lambda2: float, lambda3: float, pi_r: float,
                            u) -> np.ndarray:
    """Marginal hazard of the event time in the responder law (requires ``lambda2 != lambda3``)."""
    _check_rates(lambda1, lambda2, lambda3)
    if lambda2 == lambda3:
        raise SingularParameterization(
            "the responder-law hazard divides by lambda2 - lambda3; choose unequal rates")
    if not 0 <= pi_r <= 1:
        raise ConfigError("pi_r must lie in [0, 1]")
    u = _grid(u)
    m = min(lambda1, lambda2, lambda3)
    e1 = np.exp(-(lambda1 - m) * u)
    e2 = np.exp(-(lambda2 - m) * u)
    e3 = np.exp(-(lambda3 - m) * u)
    gap = lambda2 - lambda3
    num = (1 - pi_r) * lambda1 * e1 + pi_r * lambda2 * lambda3 * (e3 - e2) / gap
    den = (1 - pi_r) * e1 + pi_r * (lambda2 * e3 - lambda3 * e2) / gap
    return num / den


def competing_regime_hazard(lambda1: float, lambda2: float, lambda3: float, u) -> np.ndarray:
    """Marginal event hazard when death competes with reaching decision 2."""
    _check_rates(lambda1, lambda2, lambda3)
    if lambda3 == lambda1 + lambda2:
        raise SingularParameterization(
            "lambda3 equal to lambda1 + lambda2 makes the closed form 0/0")
    u = _grid(u)
    fast = lambda1 + lambda2
    m = min(fast, lambda3)
    e_fast = np.exp(-(fast - m) * u)
    e3 = np.exp(-(lambda3 - m) * u)
    num = fast * (lambda1 - lambda3) * e_fast + lambda2 * lambda3 * e3
    den = (lambda1 - lambda3) * e_fast + lambda2 * e3
    return num / den


@dataclass
class HazardCurves:
    u: np.ndarray
    prior_response: np.ndarray
    post_response: np.ndarray
    lambda0: np.ndarray

    def to_csv(self) -> str:
        from ..cohort import format_number

        rows = ["u,haz_prior_response,haz_post_response,lambda0"]
        for vals in zip(self.u, self.prior_response, self.post_response, self.lambda0):
            rows.append(",".join(format_number(float(v)) for v in vals))
        return "\n".join(rows) + "\n"


def hazard_diagnostics(lambda1: float, lambda2: float, lambda3: float, pi_r: float | None,
                       grid, law: str = "responder") -> HazardCurves:
    """Pre-response hazard, post-response hazard and marginal hazard on ``grid``.

    For the ``competing`` law the pre-response hazard is simply ``lambda1``
    and ``pi_r`` is ignored.
    """
    u = _grid(grid)
    if law == "responder":
        if pi_r is None:
            raise ConfigError("the responder law needs pi_r")
        prior = prior_response_hazard(lambda1, lambda2, pi_r, u)
        lam0 = responder_regime_hazard(lambda1, lambda2, lambda3, pi_r, u)
    elif law == "competing":
        _check_rates(lambda1, lambda2, lambda3)
        prior = np.full(u.shape, float(lambda1))
        lam0 = competing_regime_hazard(lambda1, lambda2, lambda3, u)
    else:
        raise ConfigError(f"unknown hazard law {law!r}; use 'responder' or 'competing'")
    return HazardCurves(u, prior, np.full(u.shape, float(lambda3)), lam0)


def scenario_rates(cfg) -> dict:
    """Rates of a named scenario with treatment and covariate effects suppressed.

    Responder scenarios use the treatment-1 rates (entries 1, 3 and 5 of the
    rate vector); competing scenarios use the exponentiated intercepts.
    """
    if cfg.family == "responder":
        theta = cfg.vectors()["theta"]
        return {"law": "responder", "lambda1": theta[0], "lambda2": theta[2], "lambda3": theta[4],
                "pi_r": float(cfg.params.get("p_response", 0.4)), "u_max": cfg.c_max}
    if cfg.family == "competing":
        p = cfg.params
        return {"law": "competing", "lambda1": float(np.exp(p["alpha_1d"])),
                "lambda2": float(np.exp(p["alpha_1ss"])), "lambda3": float(np.exp(p["alpha_2al"])),
                "pi_r": None, "u_max": cfg.c_max}
    raise ConfigError(f"hazard diagnostics are defined for scenarios 1-3, not {cfg.scenario}")
