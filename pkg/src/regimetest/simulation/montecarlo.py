"""Monte Carlo rejection-rate experiments over simulated SMART cohorts."""
from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..augmentation import BasisSpec, build_design_matrix, residualize
from ..cohort import truncation_time
from ..engine import compute_components, quadratic_test
from ..errors import ConfigError, RegimeTestError
from ..numerics import DEFAULT_RANK_TOL
from ..propensity import PropensitySpec, fit_propensity
from ..rules import parse_regime
from .scenarios import ScenarioConfig, covariate_basis, embedded_regimes, generate_scenario, \
    scenario_design

log = logging.getLogger(__name__)

__all__ = ["splitmix64", "replicate_seed", "McReport", "VariantSummary", "monte_carlo",
           "MC_VARIANTS", "run_replicate"]

MC_VARIANTS = ("U_nocov", "C_nocov", "U_cov", "C_cov")
_MASK = (1 << 64) - 1
RNG_NAME = "numpy PCG64 seeded by splitmix64(master_seed XOR replicate)"


def splitmix64(x: int) -> int:
    """One step of the splitmix64 mixer on a 64-bit unsigned integer."""
    z = (int(x) + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def replicate_seed(master_seed: int, replicate: int) -> int:
    return splitmix64((int(master_seed) & _MASK) ^ int(replicate))


@dataclass(frozen=True)
class VariantSummary:
    variant: str
    count: int
    reps: int

    @property
    def rate(self) -> float:
        return self.count / self.reps if self.reps else float("nan")

    @property
    def mc_se(self) -> float:
        if not self.reps:
            return float("nan")
        r = self.rate
        return math.sqrt(r * (1.0 - r) / self.reps)


@dataclass
class McReport:
    """Rejection counts per variant.

    ``reps`` counts completed replicates; replicates that raised are listed in
    ``errors`` (replicate index -> message) and excluded from every rate.
    ``rejections`` keeps the per-replicate decisions so that variants can be
    compared on the same replicate set.
    """

    scenario: ScenarioConfig
    variants: tuple
    requested: int
    master_seed: int
    alpha: float
    rejections: dict = field(default_factory=dict)   # variant -> bool array over completed reps
    errors: dict = field(default_factory=dict)
    runtime: float = 0.0
    regime_set: tuple | None = None

    @property
    def reps(self) -> int:
        return self.requested - len(self.errors)

    def summary(self, variant: str) -> VariantSummary:
        rej = self.rejections.get(variant, np.zeros(0, dtype=bool))
        return VariantSummary(variant, int(np.sum(rej)), self.reps)

    def rate(self, variant: str) -> float:
        return self.summary(variant).rate

    def rows(self) -> list[dict]:
        out = []
        for v in self.variants:
            s = self.summary(v)
            out.append({"scenario": self.scenario.scenario, "n": self.scenario.n,
                        "zeta": self.scenario.zeta, "reps": s.reps, "variant": v,
                        "rejection_rate": s.rate, "mc_se": s.mc_se})
        return out

    def to_csv(self) -> str:
        from ..cohort import format_number

        lines = ["scenario,n,zeta,reps,variant,rejection_rate,mc_se"]
        for r in self.rows():
            lines.append(",".join([r["scenario"], str(r["n"]), format_number(r["zeta"]),
                                   str(r["reps"]), r["variant"],
                                   _fmt_rate(r["rejection_rate"]), _fmt_rate(r["mc_se"])]))
        return "\n".join(lines) + "\n"

    def metadata(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(), "reps_requested": self.requested,
            "reps_completed": self.reps, "seed": self.master_seed, "alpha": self.alpha,
            "rng": RNG_NAME, "runtime_seconds": self.runtime,
            "regime_set": list(self.regime_set) if self.regime_set is not None else None,
            "errors": {str(k): v for k, v in sorted(self.errors.items())},
        }


def _fmt_rate(x: float) -> str:
    return "nan" if not math.isfinite(x) else f"{x:.6f}"


# ---------------------------------------------------------------------------
# One replicate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Plan:
    scenario: ScenarioConfig
    regimes: tuple
    regime_set: tuple | None
    variants: tuple
    alpha: float
    propensity: PropensitySpec
    at_risk_fraction: float
    rank_tol: float


def run_replicate(plan: _Plan, seed: int) -> dict:
    """Reject/accept decision for each variant on one simulated cohort."""
    cohort = generate_scenario(plan.scenario, seed)
    design = cohort.design
    texts = plan.regimes
    regimes = [parse_regime(t, design, f"regime{i + 1}") for i, t in enumerate(texts)]
    if plan.regime_set is not None:
        regimes = [regimes[i] for i in plan.regime_set]
    fitted = fit_propensity(cohort, plan.propensity)
    L = truncation_time(cohort, plan.at_risk_fraction)
    comps = compute_components(cohort, regimes, fitted, L)
    out = {}
    residuals = {}
    for variant in plan.variants:
        kind = variant.split("_", 1)[1]
        if kind not in residuals:
            basis = BasisSpec.from_dict(covariate_basis(design)) if kind == "cov" else BasisSpec()
            X = build_design_matrix(cohort, fitted, basis)
            residuals[kind] = residualize(comps.iid, X)
        iid = residuals[kind]
        _, _, p, _ = quadratic_test(iid.sum(axis=0), iid, comps.G, variant.startswith("C"),
                                    plan.rank_tol, comps.noise)
        out[variant] = p < plan.alpha
    return out


def _run_chunk(plan: _Plan, master_seed: int, indices: Sequence[int]):
    results = []
    for r in indices:
        try:
            results.append((r, run_replicate(plan, replicate_seed(master_seed, r)), None))
        except (RegimeTestError, np.linalg.LinAlgError) as exc:
            results.append((r, None, f"{type(exc).__name__}: {exc}"))
    return results


def default_threads() -> int:
    env = os.environ.get("REGIMETEST_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"REGIMETEST_THREADS must be an integer, not {env!r}") from None
    return 1


def monte_carlo(scenario: ScenarioConfig, reps: int, variants: Sequence[str] = MC_VARIANTS,
                master_seed: int = 0, threads: int | None = None, alpha: float = 0.05,
                regimes: Sequence[str] | None = None, regime_set: Sequence[int] | None = None,
                propensity: PropensitySpec | None = None, at_risk_fraction: float = 0.02,
                rank_tol: float = DEFAULT_RANK_TOL) -> McReport:
    """Rejection rates of the requested variants over ``reps`` simulated cohorts.

    ``regimes`` defaults to the design's embedded regimes; ``regime_set``
    selects a subset by zero-based index (the last selected regime is the
    reference).  Results depend only on ``master_seed``, never on
    ``threads``.
    """
    if reps < 0:
        raise ConfigError("reps must be non-negative")
    variants = tuple(variants)
    for v in variants:
        if v not in MC_VARIANTS:
            raise ConfigError(f"unknown Monte Carlo variant {v!r}; choose from {MC_VARIANTS}")
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    scenario.check()
    texts = tuple(regimes) if regimes is not None else tuple(embedded_regimes(scenario.family))
    design = scenario_design(scenario.family)
    for i, t in enumerate(texts):     # fail fast on bad rules, before any replicate runs
        parse_regime(t, design, f"regime{i + 1}")
    if regime_set is not None:
        regime_set = tuple(int(i) for i in regime_set)
        if any(i < 0 or i >= len(texts) for i in regime_set):
            raise ConfigError("regime_set index out of range")
        if len(set(regime_set)) < 2:
            raise ConfigError("the test needs at least two regimes")
    elif len(texts) < 2:
        raise ConfigError("the test needs at least two regimes")
    plan = _Plan(scenario, texts, regime_set, variants, alpha,
                 propensity or PropensitySpec(mode="saturated"), at_risk_fraction, rank_tol)
    threads = default_threads() if threads is None else max(1, int(threads))
    start = time.perf_counter()
    indices = list(range(reps))
    results = []
    if threads == 1 or reps <= 1:
        results = _run_chunk(plan, master_seed, indices)
    else:
        chunks = [indices[i::threads] for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for part in pool.map(_run_chunk, [plan] * threads, [master_seed] * threads, chunks):
                results.extend(part)
    results.sort(key=lambda t: t[0])
    report = McReport(scenario, variants, reps, int(master_seed), alpha, regime_set=regime_set)
    ok = [res for _, res, err in results if err is None]
    for r, _, err in results:
        if err is not None:
            report.errors[r] = err
            log.warning("replicate %d failed: %s", r, err)
    for v in variants:
        report.rejections[v] = np.array([res[v] for res in ok], dtype=bool)
    report.runtime = time.perf_counter() - start
    return report
