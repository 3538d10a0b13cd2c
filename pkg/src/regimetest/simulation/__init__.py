"""Simulated SMART cohorts, Monte Carlo experiments and hazard diagnostics."""

from .scenarios import (ARBITRARY_REGIMES, SCENARIO_IDS, ScenarioConfig, covariate_basis,
                        embedded_regimes, generate_scenario, named_scenario, scenario_design)
from .montecarlo import (MC_VARIANTS, McReport, VariantSummary, monte_carlo, replicate_seed,
                         splitmix64)
from .diagnostics import (HazardCurves, competing_regime_hazard, hazard_diagnostics,
                          prior_response_hazard, responder_regime_hazard, scenario_rates)

__all__ = [
    "ARBITRARY_REGIMES", "SCENARIO_IDS", "ScenarioConfig", "covariate_basis", "embedded_regimes",
    "generate_scenario", "named_scenario", "scenario_design", "MC_VARIANTS", "McReport",
    "VariantSummary", "monte_carlo", "replicate_seed", "splitmix64", "HazardCurves",
    "competing_regime_hazard", "hazard_diagnostics", "prior_response_hazard",
    "responder_regime_hazard", "scenario_rates",
]
