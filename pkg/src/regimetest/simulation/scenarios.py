"""Generative scenarios for two- and three-decision SMART simulations.

Five families are implemented:

``responder``   (scenario ids 1a, 1b, 1b-alt, 2a, 2b, 2b-alt)
    Exponential times to response and to events, responders re-randomized.
``competing``   (3a, 3b, 3c)
    Competing exponential times to death and to the second decision, with
    "added life" after it; only responders are re-randomized.
``control``     (4)
    As ``competing`` with a third stage-1 arm (code 2) that is never
    re-randomized.
``eight``       (5)
    Everyone reaching the second decision is re-randomized within
    (stage-1 arm, response) strata, giving eight embedded regimes.
``three_stage`` (3stage)
    The ``competing`` family extended by a third decision.

Every generator returns a validated-by-construction :class:`Cohort`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from ..cohort import Cohort
from ..errors import ConfigError
from ..rules import SmartDesign, Stratum, parse_condition

__all__ = [
    "ScenarioConfig", "SCENARIO_IDS", "named_scenario", "generate_scenario",
    "scenario_design", "embedded_regimes", "covariate_basis", "expit",
    "ARBITRARY_REGIMES",
]

SCENARIO_IDS = ("1a", "1b", "1b-alt", "2a", "2b", "2b-alt", "3a", "3b", "3c", "4", "5",
                "3stage", "custom")


def expit(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


# Threshold rules on scenario-3 covariates used to show that regimes need not
# be embedded in the design.
ARBITRARY_REGIMES = (
    "stage1: if x12 >= 0.3 then 1 else 0; stage2: if x12 >= 0.4 and x2 == 1 and r == 1 then 1 else 0",
    "stage1: if x12 <= 0.5 then 1 else 0; stage2: if x12 >= 0.6 and x2 == 1 and r == 1 then 1 else 0",
    "stage1: if x12 >= 0.7 then 1 else 0; stage2: if x12 >= 0.8 and x2 == 0 and r == 1 then 1 else 0",
)


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete parameterisation of one generative scenario.

    ``params`` holds the family-specific constants (rates, coefficient
    vectors and intercepts).  Coefficient vectors that scale with ``psi`` or
    ``zeta`` are produced by :meth:`vectors`.
    """

    scenario: str
    family: str
    n: int
    zeta: float = 0.0
    psi: float = 1.5
    c_max: float = 500.0
    params: Mapping = field(default_factory=dict)

    def with_n(self, n: int) -> "ScenarioConfig":
        return replace(self, n=int(n))

    def with_zeta(self, zeta: float) -> "ScenarioConfig":
        return replace(self, zeta=float(zeta))

    # -- derived coefficient vectors ---------------------------------------------
    def vectors(self) -> dict:
        p, z, s = self.params, self.zeta, self.psi
        if self.family == "responder":
            return {k: tuple(float(x) for x in p[k]) for k in
                    ("theta", "theta_x2", "delta_nr", "delta_r", "alpha1", "alpha2")}
        if self.family == "competing":
            return {
                "theta_1d": (p["alpha_1d"], 0.5 * s, 0.5 * s, -0.26 * z),
                "theta_1ss": (p["alpha_1ss"], 0.5 * s, 0.5 * s, 0.24 * z),
                "theta_x2": (0.2, 0.5 * s, 0.4 * s, 0.12 * z),
                "theta_2al": (p["alpha_2al"], 0.5 * s, -0.52 * s, 0.6 * s, -0.1 * z, -0.11 * z),
            }
        if self.family == "control":
            return {
                "theta_1d": (p["alpha_1d"], 0.5 * s, 0.5 * s, -0.26 * z, 0.15 * z),
                "theta_1ss": (p["alpha_1ss"], 0.5 * s, 0.5 * s, 0.24 * z, -0.13 * z),
                "theta_x2": (0.2, 0.5 * s, 0.4 * s, 0.12 * z, 0.1 * z),
                "theta_2al": (p["alpha_2al"], 0.5 * s, -0.52 * s, 0.6 * s, -0.1 * z, 0.15 * z,
                              -0.11 * z),
            }
        if self.family == "eight":
            return {
                "theta_1d": (p["alpha_1d"], 0.5 * s, 0.5 * s, -0.26 * z),
                "theta_1ss": (p["alpha_1ss"], 0.5 * s, 0.5 * s, 0.24 * z),
                "theta_r": (0.3, 0.15, 0.15, 0.2 * z),
                "theta_x2": (0.2, 0.5 * s, 0.4 * s, 0.12 * z),
                "theta_2al": (p["alpha_2al"], 0.5 * s, -0.52 * s, 0.6 * s, -0.1 * z, -0.11 * z,
                              -0.3 * z),
            }
        if self.family == "three_stage":
            second = (0.5 * s, -0.52 * s, 0.6 * s, -0.1 * z, -0.11 * z)
            return {
                "theta_1d": (p["alpha_1d"], 0.5 * s, 0.5 * s, -0.26 * z),
                "theta_1ss": (p["alpha_1ss"], 0.5 * s, 0.5 * s, 0.24 * z),
                "theta_x2": (0.2, 0.5 * s, 0.4 * s, 0.12 * z),
                "theta_2d": (p["alpha_2d"],) + second,
                "theta_2ts": (p["alpha_2ts"],) + second,
                # intercept, x11, x12, x2, a1, a2 (the x2 slope is zero)
                "theta_x3": (0.2, 0.5 * s, 0.4 * s, 0.0, 0.12 * z, -0.15 * z),
                "theta_3al": (p["alpha_3al"], 0.5 * s, -0.52 * s, 0.6 * s, 0.1 * s, -0.1 * z,
                              -0.11 * z, 0.2 * z),
            }
        raise ConfigError(f"unknown scenario family {self.family!r}")

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario, "family": self.family, "n": self.n,
            "zeta": self.zeta, "psi": self.psi, "c_max": self.c_max,
            "params": {k: (list(v) if isinstance(v, (list, tuple)) else v)
                       for k, v in self.params.items()},
            "vectors": {k: list(v) for k, v in self.vectors().items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScenarioConfig":
        """Custom scenario: a named base (``"base"``) with overrides, or a full spec."""
        data = dict(data)
        base_id = data.pop("base", None)
        if base_id is not None:
            base = named_scenario(str(base_id), int(data.get("n", 1000)),
                                  data.get("zeta"))
            params = dict(base.params)
            params.update(data.pop("params", {}) or {})
            cfg = replace(base, scenario="custom", params=params,
                          **{k: data[k] for k in ("n", "zeta", "psi", "c_max") if k in data})
        else:
            try:
                cfg = cls(scenario="custom", family=data["family"], n=int(data["n"]),
                          zeta=float(data.get("zeta", 0.0)), psi=float(data.get("psi", 1.5)),
                          c_max=float(data["c_max"]), params=dict(data.get("params", {})))
            except KeyError as exc:
                raise ConfigError(f"custom scenario is missing key {exc.args[0]!r}") from None
        cfg.check()
        return cfg

    def check(self) -> None:
        if self.n < 1:
            raise ConfigError("scenario n must be positive")
        if not (math.isfinite(self.c_max) and self.c_max > 0):
            raise ConfigError("c_max must be a positive finite number")
        try:
            vecs = self.vectors()
        except KeyError as exc:
            raise ConfigError(f"scenario parameter {exc.args[0]!r} is missing") from None
        for name, vec in vecs.items():
            if not all(math.isfinite(float(x)) for x in vec):
                raise ConfigError(f"scenario vector {name} has non-finite entries")
        if self.family == "responder":
            if len(vecs["theta"]) != 8 or any(t <= 0 for t in vecs["theta"]):
                raise ConfigError("theta needs eight positive rates")


# ---------------------------------------------------------------------------
# Named parameterisations
# ---------------------------------------------------------------------------

_NULL_RESPONDER = dict(theta_x2=(0.0, 0.0, 0.0), delta_nr=(0.0, 0.0), delta_r=(0.0, 0.0),
                       alpha1=(0.0, 0.0, 0.0, 0.0), alpha2=(0.0, 0.0, 0.0, 0.0))
_COV_RESPONDER = dict(theta_x2=(0.0, 0.15, 0.0), delta_nr=(0.3, 0.3), delta_r=(0.7, 0.7),
                      alpha1=(0.7, 0.7, 0.7, 0.7), alpha2=(0.7, 0.7, 0.7, 0.7))
_THETA_1 = (1 / 0.91, 1 / 0.91, 1 / 0.5, 1 / 0.5, 1.0, 1.0, 1.0, 1.0)
_THETA_2 = (1 / 0.91, 1 / 0.91, 1 / 0.5, 1 / 0.5, 1 / 3, 1 / 3, 1 / 3, 1 / 3)
_THETA_1_ALT = (1 / 0.91, 1 / 1.15, 1 / 0.9, 1 / 0.5, 1 / 2, 1 / 2.33, 1 / 1.11, 1 / 0.67)
_THETA_2_ALT = (1 / 0.35, 1 / 0.9, 1 / 0.5, 1 / 0.5, 1 / 3.3, 1 / 3.3, 1 / 3, 1 / 3)


def named_scenario(scenario: str, n: int = 1000, zeta: float | None = None) -> ScenarioConfig:
    """Parameter set for a named scenario id."""
    z = 0.0 if zeta is None else float(zeta)
    if scenario in ("1a", "1b", "1b-alt", "2a", "2b", "2b-alt"):
        first = scenario.startswith("1")
        if scenario.endswith("alt"):
            theta = _THETA_1_ALT if first else _THETA_2_ALT
        else:
            theta = _THETA_1 if first else _THETA_2
        extra = _NULL_RESPONDER if scenario[1] == "a" else _COV_RESPONDER
        return ScenarioConfig(scenario, "responder", n, zeta=0.0, psi=0.0,
                              c_max=3.80 if first else 8.0,
                              params=dict(theta=theta, p_response=0.4, **extra))
    if scenario in ("3a", "3b", "3c"):
        alpha_1d, alpha_2al, cmax = {"3a": (-5.5, -5.5, 500.0), "3b": (-4.5, -5.5, 500.0),
                                     "3c": (-5.5, -3.5, 300.0)}[scenario]
        return ScenarioConfig(scenario, "competing", n, zeta=z, psi=1.5, c_max=cmax,
                              params=dict(alpha_1d=alpha_1d, alpha_1ss=-4.2, alpha_2al=alpha_2al))
    if scenario == "4":
        return ScenarioConfig(scenario, "control", n, zeta=z, psi=1.5, c_max=500.0,
                              params=dict(alpha_1d=-5.5, alpha_1ss=-4.2, alpha_2al=-5.5))
    if scenario == "5":
        return ScenarioConfig(scenario, "eight", n, zeta=z, psi=1.5, c_max=500.0,
                              params=dict(alpha_1d=-5.5, alpha_1ss=-3.5, alpha_2al=-5.5))
    if scenario == "3stage":
        return ScenarioConfig(scenario, "three_stage", n, zeta=z, psi=1.5, c_max=350.0,
                              params=dict(alpha_1d=-4.5, alpha_1ss=-3.2, alpha_2d=-4.0,
                                          alpha_2ts=-2.7, alpha_3al=-3.0))
    raise ConfigError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIO_IDS[:-1])}")


# ---------------------------------------------------------------------------
# Designs, regimes and covariate bases per family
# ---------------------------------------------------------------------------

def _stratum(name: str, stage: int, cond: str, options=(0, 1)) -> Stratum:
    return Stratum(name, stage, parse_condition(cond), tuple(options))


def scenario_design(family: str) -> SmartDesign:
    if family == "responder":
        return SmartDesign(2, ((0, 1), (0, 1)),
                           (_stratum("a1_0", 2, "a1 == 0"), _stratum("a1_1", 2, "a1 == 1")),
                           {"x1": 1, "r": 2, "x2": 2})
    if family == "competing":
        return SmartDesign(2, ((0, 1), (0, 1)),
                           (_stratum("a1_0", 2, "a1 == 0"), _stratum("a1_1", 2, "a1 == 1")),
                           {"x11": 1, "x12": 1, "r": 2, "x2": 2})
    if family == "control":
        return SmartDesign(2, ((0, 1, 2), (0, 1)),
                           (_stratum("a1_0", 2, "a1 == 0"), _stratum("a1_1", 2, "a1 == 1")),
                           {"x11": 1, "x12": 1, "r": 2, "x2": 2})
    if family == "eight":
        strata = tuple(_stratum(f"a1_{a}_r_{r}", 2, f"a1 == {a} and r == {r}")
                       for a in (0, 1) for r in (1, 0))
        return SmartDesign(2, ((0, 1), (0, 1)), strata, {"x11": 1, "x12": 1, "r": 2, "x2": 2})
    if family == "three_stage":
        strata = (_stratum("a1_0", 2, "a1 == 0"), _stratum("a1_1", 2, "a1 == 1"))
        strata += tuple(_stratum(f"a1_{a}_a2_{b}", 3, f"a1 == {a} and a2 == {b}")
                        for a in (0, 1) for b in (0, 1))
        return SmartDesign(3, ((0, 1), (0, 1), (0, 1)), strata,
                           {"x11": 1, "x12": 1, "x2": 2, "x3": 3})
    raise ConfigError(f"unknown scenario family {family!r}")


def embedded_regimes(family: str) -> list[str]:
    """Rule texts of the design's embedded regimes, in the conventional order."""
    if family in ("responder", "competing"):
        return [f"stage1: {a}; stage2: {b}" for a in (0, 1) for b in (0, 1)]
    if family == "control":
        return [f"stage1: {a}; stage2: {b}" for a in (0, 1) for b in (0, 1)] + ["stage1: 2; stage2: 0"]
    if family == "eight":
        return [f"stage1: {a}; stage2: if r == 1 then {b} else {c}"
                for a in (0, 1) for b in (0, 1) for c in (0, 1)]
    if family == "three_stage":
        order = [(0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0), (0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, 1)]
        return [f"stage1: {a}; stage2: {b}; stage3: {c}" for a, b, c in order]
    raise ConfigError(f"unknown scenario family {family!r}")


def covariate_basis(design: SmartDesign) -> dict:
    """Basis JSON using every non-response covariate known at each stratum's stage."""
    def known(stage):
        return [c for c, s in design.covariates.items() if s <= stage and c != "r"]

    out: dict = {"stage1": known(1)}
    for s in design.strata:
        out.setdefault(f"stage{s.stage}", {})[s.name] = known(s.stage)
    return out


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def _exp(rng: np.random.Generator, rate: np.ndarray) -> np.ndarray:
    return rng.exponential(1.0, size=rate.shape) / rate


def _ids(n: int) -> list[str]:
    return [str(i + 1) for i in range(n)]


def _gen_responder(cfg: ScenarioConfig, rng: np.random.Generator) -> Cohort:
    v = cfg.vectors()
    n = cfg.n
    theta = np.asarray(v["theta"])
    x1 = rng.standard_normal(n)
    a1 = (rng.random(n) < 0.5).astype(np.int64)
    resp = rng.random(n) < cfg.params.get("p_response", 0.4)
    tx = np.asarray(v["theta_x2"])
    p_x2 = expit(tx[0] + tx[1] * x1 + tx[2] * a1)
    x2 = (rng.random(n) < p_x2).astype(float)
    a2 = (rng.random(n) < 0.5).astype(np.int64)
    arm = 1 - a1                                        # 0 -> treatment 1, 1 -> treatment 0
    d_nr = np.asarray(v["delta_nr"])[arm]
    d_r = np.asarray(v["delta_r"])[arm]
    rate_nr = theta[0:2][arm] * np.exp(d_nr * x1)
    rate_r = theta[2:4][arm] * np.exp(d_r * x1)
    cell = 2 * (1 - a1) + (1 - a2)                      # order 11, 10, 01, 00
    al1 = np.asarray(v["alpha1"])[cell]
    al2 = np.asarray(v["alpha2"])[cell]
    rate_re = theta[4:8][cell] * np.exp(al1 * x1 + al2 * (x2 - p_x2))
    t_nr = _exp(rng, rate_nr)
    t_r = _exp(rng, rate_r)
    t_re = _exp(rng, rate_re)
    T = np.where(resp, t_r + t_re, t_nr)
    C = rng.uniform(0.0, cfg.c_max, n)
    U = np.minimum(T, C)
    delta = (T <= C).astype(np.int64)
    resp = resp & (C >= t_r)
    kappa = np.where(resp, 2, 1)
    return Cohort(
        scenario_design("responder"), _ids(n), kappa, U, delta,
        [a1, np.where(resp, a2, -1)], [np.zeros(n), np.where(resp, t_r, np.inf)],
        {"x1": x1, "r": np.where(resp, 1.0, np.nan), "x2": np.where(resp, x2, np.nan)},
        validate=False)


def _gen_competing(cfg: ScenarioConfig, rng: np.random.Generator) -> Cohort:
    v = cfg.vectors()
    n = cfg.n
    x11 = rng.standard_normal(n)
    x12 = rng.random(n)
    a1 = (rng.random(n) < 0.5).astype(np.int64)
    base = np.column_stack([np.ones(n), x11, x12 - 0.5, a1 - 0.5])
    t_d = _exp(rng, np.exp(base @ np.asarray(v["theta_1d"])))
    t_ss = _exp(rng, np.exp(base @ np.asarray(v["theta_1ss"])))
    resp = t_ss < t_d
    p_x2 = expit(np.column_stack([np.ones(n), x11, x12, a1]) @ np.asarray(v["theta_x2"]))
    x2 = (rng.random(n) < p_x2).astype(float)
    a2 = (rng.random(n) < 0.5).astype(np.int64)
    design2 = np.column_stack([np.ones(n), x11, x12 - 0.5, x2 - p_x2, a1 - 0.5, a2 - 0.5])
    t_al = _exp(rng, np.exp(design2 @ np.asarray(v["theta_2al"])))
    T = np.where(resp, t_ss + t_al, t_d)
    C = rng.uniform(0.0, cfg.c_max, n)
    U = np.minimum(T, C)
    delta = (T <= C).astype(np.int64)
    resp = resp & (C >= t_ss)
    kappa = np.where(resp, 2, 1)
    return Cohort(
        scenario_design("competing"), _ids(n), kappa, U, delta,
        [a1, np.where(resp, a2, -1)], [np.zeros(n), np.where(resp, t_ss, np.inf)],
        {"x11": x11, "x12": x12, "r": np.where(resp, 1.0, np.nan),
         "x2": np.where(resp, x2, np.nan)},
        validate=False)


def _gen_control(cfg: ScenarioConfig, rng: np.random.Generator) -> Cohort:
    v = cfg.vectors()
    n = cfg.n
    x11 = rng.standard_normal(n)
    x12 = rng.random(n)
    a1 = rng.integers(0, 3, n).astype(np.int64)
    i1 = (a1 == 1).astype(float)
    i2 = (a1 == 2).astype(float)
    base = np.column_stack([np.ones(n), x11, x12, i1, i2])
    t_d = _exp(rng, np.exp(base @ np.asarray(v["theta_1d"])))
    t_ss = _exp(rng, np.exp(base @ np.asarray(v["theta_1ss"])))
    resp = t_ss < t_d
    p_x2 = expit(base @ np.asarray(v["theta_x2"]))
    x2 = (rng.random(n) < p_x2).astype(float)
    a2 = (rng.random(n) < 0.5).astype(np.int64)
    active = a1 < 2
    design2 = np.column_stack([np.ones(n), x11, x12, x2, i1, i2, a2 * active])
    t_al = _exp(rng, np.exp(design2 @ np.asarray(v["theta_2al"])))
    T = np.where(resp, t_ss + t_al, t_d)
    C = rng.uniform(0.0, cfg.c_max, n)
    U = np.minimum(T, C)
    delta = (T <= C).astype(np.int64)
    reach = resp & (C >= t_ss) & active
    kappa = np.where(reach, 2, 1)
    return Cohort(
        scenario_design("control"), _ids(n), kappa, U, delta,
        [a1, np.where(reach, a2, -1)], [np.zeros(n), np.where(reach, t_ss, np.inf)],
        {"x11": x11, "x12": x12, "r": np.where(reach, 1.0, np.nan),
         "x2": np.where(reach, x2, np.nan)},
        validate=False)


def _gen_eight(cfg: ScenarioConfig, rng: np.random.Generator) -> Cohort:
    v = cfg.vectors()
    n = cfg.n
    x11 = rng.standard_normal(n)
    x12 = rng.random(n)
    a1 = (rng.random(n) < 0.5).astype(np.int64)
    base = np.column_stack([np.ones(n), x11, x12, a1])
    t_d = _exp(rng, np.exp(base @ np.asarray(v["theta_1d"])))
    t_ss = _exp(rng, np.exp(base @ np.asarray(v["theta_1ss"])))
    second = t_ss < t_d
    resp = (rng.random(n) < expit(base @ np.asarray(v["theta_r"]))).astype(np.int64)
    p_x2 = expit(base @ np.asarray(v["theta_x2"]))
    x2 = (rng.random(n) < p_x2).astype(float)
    a2 = (rng.random(n) < 0.5).astype(np.int64)
    design2 = np.column_stack([np.ones(n), x11, x12, x2, a1, a2, resp])
    t_al = _exp(rng, np.exp(design2 @ np.asarray(v["theta_2al"])))
    T = np.where(second, t_ss + t_al, t_d)
    C = rng.uniform(0.0, cfg.c_max, n)
    U = np.minimum(T, C)
    delta = (T <= C).astype(np.int64)
    reach = second & (C >= t_ss)
    kappa = np.where(reach, 2, 1)
    return Cohort(
        scenario_design("eight"), _ids(n), kappa, U, delta,
        [a1, np.where(reach, a2, -1)], [np.zeros(n), np.where(reach, t_ss, np.inf)],
        {"x11": x11, "x12": x12, "r": np.where(reach, resp.astype(float), np.nan),
         "x2": np.where(reach, x2, np.nan)},
        validate=False)


def _gen_three_stage(cfg: ScenarioConfig, rng: np.random.Generator) -> Cohort:
    v = cfg.vectors()
    n = cfg.n
    x11 = rng.standard_normal(n)
    x12 = rng.random(n)
    a1 = (rng.random(n) < 0.5).astype(np.int64)
    base = np.column_stack([np.ones(n), x11, x12 - 0.5, a1 - 0.5])
    t_d1 = _exp(rng, np.exp(base @ np.asarray(v["theta_1d"])))
    t_ss = _exp(rng, np.exp(base @ np.asarray(v["theta_1ss"])))
    r2 = t_ss < t_d1
    p_x2 = expit(np.column_stack([np.ones(n), x11, x12, a1]) @ np.asarray(v["theta_x2"]))
    x2 = (rng.random(n) < p_x2).astype(float)
    a2 = (rng.random(n) < 0.5).astype(np.int64)
    d2 = np.column_stack([np.ones(n), x11, x12 - 0.5, x2 - p_x2, a1 - 0.5, a2 - 0.5])
    t_d2 = _exp(rng, np.exp(d2 @ np.asarray(v["theta_2d"])))
    t_ts = _exp(rng, np.exp(d2 @ np.asarray(v["theta_2ts"])))
    r3 = t_ts < t_d2
    p_x3 = expit(np.column_stack([np.ones(n), x11, x12, x2, a1, a2]) @ np.asarray(v["theta_x3"]))
    x3 = (rng.random(n) < p_x3).astype(float)
    a3 = (rng.random(n) < 0.5).astype(np.int64)
    d3 = np.column_stack([np.ones(n), x11, x12 - 0.5, x2 - p_x2, x3 - p_x3,
                          a1 - 0.5, a2 - 0.5, a3 - 0.5])
    t_al = _exp(rng, np.exp(d3 @ np.asarray(v["theta_3al"])))
    T = np.where(~r2, t_d1, np.where(~r3, t_ss + t_d2, t_ss + t_ts + t_al))
    C = rng.uniform(0.0, cfg.c_max, n)
    U = np.minimum(T, C)
    delta = (T <= C).astype(np.int64)
    r2 = r2 & (C >= t_ss)
    r3 = r2 & r3 & (C >= t_ss + t_ts)
    kappa = np.where(r3, 3, np.where(r2, 2, 1))
    return Cohort(
        scenario_design("three_stage"), _ids(n), kappa, U, delta,
        [a1, np.where(r2, a2, -1), np.where(r3, a3, -1)],
        [np.zeros(n), np.where(r2, t_ss, np.inf), np.where(r3, t_ss + t_ts, np.inf)],
        {"x11": x11, "x12": x12, "x2": np.where(r2, x2, np.nan), "x3": np.where(r3, x3, np.nan)},
        validate=False)


_GENERATORS = {
    "responder": _gen_responder, "competing": _gen_competing, "control": _gen_control,
    "eight": _gen_eight, "three_stage": _gen_three_stage,
}


def generate_scenario(cfg: ScenarioConfig, seed) -> Cohort:
    """Draw one cohort.  ``seed`` is an int or a ``numpy.random.Generator``."""
    cfg.check()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _GENERATORS[cfg.family](cfg, rng)
