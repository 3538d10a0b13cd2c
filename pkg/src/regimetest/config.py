"""Analysis configuration: JSON parsing, defaults and round-trip dumping.

Example document::

    {
      "design": {
        "stages": 2,
        "options": [[0, 1], [0, 1]],
        "covariates": {"x11": 1, "x12": 1, "r": 2, "x2": 2},
        "strata": [
          {"name": "a1_0", "stage": 2, "condition": "a1 == 0"},
          {"name": "a1_1", "stage": 2, "condition": "a1 == 1"}
        ]
      },
      "regimes": ["stage1: 0; stage2: 0", "stage1: 1; stage2: 1"],
      "propensity": {"mode": "saturated"}
    }

Omitted keys take their defaults: every regime selected, saturated
propensity, empty basis, correction on, 2% at-risk truncation, alpha 0.05.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .augmentation import BasisSpec
from .engine import VARIANTS, TestOptions
from .errors import ConfigError, RuleError
from .numerics import DEFAULT_RANK_TOL
from .propensity import PropensitySpec
from .rules import Regime, SmartDesign, Stratum, parse_condition, parse_regime

__all__ = ["AnalysisConfig", "parse_config", "load_config", "design_from_dict", "design_to_dict"]

_TOP_KEYS = {"design", "regimes", "regime_set", "propensity", "basis", "L", "at_risk_fraction",
             "correction", "alpha", "rank_tol", "variant"}


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def design_from_dict(data: Mapping) -> SmartDesign:
    _require(isinstance(data, Mapping), "design must be an object")
    unknown = set(data) - {"stages", "options", "strata", "covariates"}
    _require(not unknown, f"design: unknown key(s) {sorted(unknown)}")
    K = data.get("stages")
    _require(isinstance(K, int) and not isinstance(K, bool) and K >= 1,
             "design.stages must be a positive integer")
    options = data.get("options")
    _require(isinstance(options, list) and len(options) == K
             and all(isinstance(o, list) and o for o in options),
             "design.options must list the option codes of every stage")
    for opts in options:
        _require(all(isinstance(c, int) and not isinstance(c, bool) for c in opts),
                 "design.options entries must be integer codes")
    covs = data.get("covariates", {})
    _require(isinstance(covs, Mapping), "design.covariates must map column names to stages")
    strata = []
    for idx, raw in enumerate(data.get("strata", [])):
        where = f"design.strata[{idx}]"
        _require(isinstance(raw, Mapping), f"{where} must be an object")
        bad = set(raw) - {"name", "stage", "condition", "options"}
        _require(not bad, f"{where}: unknown key(s) {sorted(bad)}")
        for key in ("name", "stage", "condition"):
            _require(key in raw, f"{where} is missing key {key!r}")
        stage = raw["stage"]
        _require(isinstance(stage, int) and 2 <= stage <= K, f"{where}.stage must lie in 2..{K}")
        try:
            cond = parse_condition(str(raw["condition"]))
        except RuleError as exc:
            raise ConfigError(f"{where}.condition: {exc}") from exc
        opts = raw.get("options", options[stage - 1])
        strata.append(Stratum(str(raw["name"]), stage, cond, tuple(int(o) for o in opts)))
    try:
        return SmartDesign(K, tuple(tuple(o) for o in options), tuple(strata),
                           {str(k): int(v) for k, v in covs.items()})
    except RuleError as exc:
        raise ConfigError(f"design: {exc}") from exc


def design_to_dict(design: SmartDesign) -> dict:
    return {
        "stages": design.K,
        "options": [list(o) for o in design.options],
        "covariates": dict(design.covariates),
        "strata": [{"name": s.name, "stage": s.stage, "condition": s.condition.to_text(),
                    "options": list(s.options)} for s in design.strata],
    }


@dataclass
class AnalysisConfig:
    design: SmartDesign
    regime_texts: list
    regime_set: list | None = None
    propensity: PropensitySpec = field(default_factory=lambda: PropensitySpec(mode="saturated"))
    basis: BasisSpec = field(default_factory=BasisSpec)
    L: float | None = None
    at_risk_fraction: float = 0.02
    correction: bool = True
    alpha: float = 0.05
    rank_tol: float = DEFAULT_RANK_TOL
    variant: str = "auto"

    def regimes(self) -> list[Regime]:
        """Parsed regimes selected by ``regime_set`` (all when unset)."""
        out = []
        for i, text in enumerate(self.regime_texts):
            try:
                out.append(parse_regime(text, self.design, f"regime{i}"))
            except RuleError as exc:
                raise _with_index(exc, i) from exc
        chosen = self.regime_set if self.regime_set is not None else range(len(out))
        return [out[i] for i in chosen]

    def selected_count(self) -> int:
        return len(self.regime_set) if self.regime_set is not None else len(self.regime_texts)

    def require_regimes(self, minimum: int) -> None:
        if self.selected_count() < minimum:
            if minimum == 2:
                raise ConfigError("the test needs at least two regimes in regime_set")
            raise ConfigError(f"at least {minimum} regime(s) required")

    def options(self) -> TestOptions:
        return TestOptions(propensity=self.propensity, basis=self.basis,
                           correction=self.correction, L=self.L,
                           at_risk_fraction=self.at_risk_fraction, rank_tol=self.rank_tol,
                           variant=self.variant)

    def to_dict(self) -> dict:
        """Fully resolved configuration, defaults included."""
        return {
            "design": design_to_dict(self.design),
            "regimes": list(self.regime_texts),
            "regime_set": list(self.regime_set) if self.regime_set is not None
            else list(range(len(self.regime_texts))),
            "propensity": self.propensity.to_dict(),
            "basis": self.basis.to_dict(self.design),
            "L": self.L,
            "at_risk_fraction": self.at_risk_fraction,
            "correction": self.correction,
            "alpha": self.alpha,
            "rank_tol": self.rank_tol,
            "variant": self.variant,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _with_index(exc: RuleError, index: int) -> RuleError:
    new = RuleError(f"regimes[{index}]: {exc}")
    new.__cause__ = exc
    return new


def _number(data: Mapping, key: str, default, lo=None, hi=None, open_lo=False):
    value = data.get(key, default)
    if value is None:
        return None
    _require(isinstance(value, (int, float)) and not isinstance(value, bool)
             and math.isfinite(value), f"{key} must be a finite number")
    value = float(value)
    if lo is not None:
        _require(value > lo if open_lo else value >= lo, f"{key} is out of range")
    if hi is not None:
        _require(value < hi, f"{key} is out of range")
    return value


def parse_config(data: Mapping | str) -> AnalysisConfig:
    """Validate a config document (a mapping or JSON text) and fill defaults."""
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    _require(isinstance(data, Mapping), "config must be a JSON object")
    unknown = set(data) - _TOP_KEYS
    _require(not unknown, f"unknown config key(s) {sorted(unknown)}")
    _require("design" in data, "config is missing key 'design'")
    _require("regimes" in data, "config is missing key 'regimes'")
    design = design_from_dict(data["design"])
    texts = data["regimes"]
    _require(isinstance(texts, list) and all(isinstance(t, str) for t in texts),
             "regimes must be a list of rule strings")
    for i, t in enumerate(texts):
        try:
            parse_regime(t, design, f"regime{i}")
        except RuleError as exc:
            raise _with_index(exc, i) from exc
    regime_set = data.get("regime_set")
    if regime_set is not None:
        _require(isinstance(regime_set, list)
                 and all(isinstance(i, int) and not isinstance(i, bool) for i in regime_set),
                 "regime_set must be a list of regime indices")
        _require(all(0 <= i < len(texts) for i in regime_set), "regime_set index out of range")
        _require(len(set(regime_set)) == len(regime_set), "regime_set repeats an index")
    propensity = PropensitySpec.from_dict(data.get("propensity", {"mode": "saturated"}))
    propensity.validate(design)
    basis = BasisSpec.from_dict(data.get("basis"))
    basis.validate(design)
    L = _number(data, "L", None, lo=0.0, open_lo=True)
    frac = _number(data, "at_risk_fraction", 0.02, lo=0.0, hi=1.0)
    correction = data.get("correction", True)
    _require(isinstance(correction, bool), "correction must be true or false")
    alpha = _number(data, "alpha", 0.05, lo=0.0, hi=1.0, open_lo=True)
    rank_tol = _number(data, "rank_tol", DEFAULT_RANK_TOL, lo=0.0, hi=1.0, open_lo=True)
    variant = data.get("variant", "auto")
    _require(variant in VARIANTS, f"variant must be one of {list(VARIANTS)}")
    return AnalysisConfig(design, list(texts), list(regime_set) if regime_set is not None else None,
                          propensity, basis, L, frac, correction, alpha, rank_tol, variant)


def load_config(path) -> AnalysisConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
