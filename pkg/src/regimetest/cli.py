"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numerical
failure.  Every output file is written atomically and carries (inline or in
a ``.meta.json`` sidecar) the fully resolved configuration that produced it.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import atomic_write_text, load_cohort
from .config import AnalysisConfig, load_config
from .engine import regime_cumhaz, run_test
from .errors import ConfigError, DataError, NumericalError
from .propensity import fit_propensity
from .simulation import (ARBITRARY_REGIMES, MC_VARIANTS, ScenarioConfig, hazard_diagnostics,
                         monte_carlo, named_scenario, scenario_rates)
from .simulation.scenarios import SCENARIO_IDS

log = logging.getLogger("regimetest")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument parser whose failures map to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _nonneg_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return value


def _index_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--log-level", choices=sorted(_LEVELS), default="warn")

    parser = _Parser(prog="regimetest", description=(
        "Weighted logrank tests comparing survival under multistage treatment regimes."))
    parser.add_argument("--version", action="version", version=f"regimetest {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("test", parents=[common], help="test equality of regime survival curves")
    p.add_argument("--data", required=True, help="cohort CSV")
    p.add_argument("--config", required=True, help="analysis config JSON")
    p.add_argument("--out", required=True, help="result JSON")

    p = sub.add_parser("curves", parents=[common], help="regime-specific survival estimates")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="CSV with columns regime,time,cumhaz,survival")

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo rejection rates")
    p.add_argument("--scenario", required=True, choices=SCENARIO_IDS)
    p.add_argument("--n", type=_positive_int, default=1000)
    p.add_argument("--reps", type=_nonneg_int, default=1000)
    p.add_argument("--zeta", type=float, default=None)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker processes (default: $REGIMETEST_THREADS or 1)")
    p.add_argument("--config", default=None,
                   help="JSON with keys scenario (custom parameters), regimes, regime_set, "
                        "variants, alpha")
    p.add_argument("--regime-set", type=_index_list, default=None,
                   help="comma-separated zero-based regime indices to compare")
    p.add_argument("--arbitrary-regimes", action="store_true",
                   help="compare the three covariate-threshold regimes (scenario 3 family)")
    p.add_argument("--out", required=True, help="CSV output; metadata goes to OUT.meta.json")

    p = sub.add_parser("diagnose-hazards", parents=[common], help="closed-form hazard curves")
    p.add_argument("--scenario", default=None, help="1a, 1b, 2a, 2b, 3a, 3b or 3c")
    p.add_argument("--law", choices=["responder", "competing"], default=None)
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--lambda3", type=float, default=None)
    p.add_argument("--pi-r", type=float, default=None)
    p.add_argument("--u-max", type=float, default=None)
    p.add_argument("--points", type=_positive_int, default=201)
    p.add_argument("--out", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a cohort CSV against a design")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="optional JSON summary")
    return parser


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _load(args) -> tuple[AnalysisConfig, object]:
    cfg = load_config(args.config)
    cohort = load_cohort(args.data, cfg.design)
    return cfg, cohort


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def cmd_test(args) -> int:
    cfg, cohort = _load(args)
    cfg.require_regimes(2)
    regimes = cfg.regimes()
    echo = {"analysis": cfg.to_dict(), "data": os.path.abspath(args.data)}
    result = run_test(cohort, regimes, cfg.options(), config_echo=echo)
    out = result.to_dict()
    out["alpha"] = cfg.alpha
    out["reject"] = bool(result.p_value < cfg.alpha)
    out["regimes"] = [r.to_text() for r in regimes]
    atomic_write_text(args.out, _json_text(out))
    print(f"statistic={result.statistic:.6g} nu={result.nu} p_value={result.p_value:.6g}")
    return EXIT_OK


def cmd_curves(args) -> int:
    from .cohort import format_number, truncation_time

    cfg, cohort = _load(args)
    cfg.require_regimes(1)
    regimes = cfg.regimes()
    fitted = fit_propensity(cohort, cfg.propensity)
    L = cfg.L if cfg.L is not None else truncation_time(cohort, cfg.at_risk_fraction)
    lines = ["regime,time,cumhaz,survival"]
    index = cfg.regime_set if cfg.regime_set is not None else list(range(len(cfg.regime_texts)))
    for i, regime in zip(index, regimes):
        curve = regime_cumhaz(cohort, regime, fitted, L=L)
        for t, h, s in zip(curve.time, curve.cumhaz, curve.survival):
            lines.append(f"{i},{format_number(t)},{format_number(h)},{format_number(s)}")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    meta = {"analysis": cfg.to_dict(), "data": os.path.abspath(args.data), "L": L}
    atomic_write_text(args.out + ".meta.json", _json_text(meta))
    return EXIT_OK


def _simulation_inputs(args):
    extra = {}
    if args.config:
        try:
            extra = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config} is not valid JSON: {exc}") from None
        if not isinstance(extra, dict):
            raise ConfigError("simulation config must be a JSON object")
        unknown = set(extra) - {"scenario", "regimes", "regime_set", "variants", "alpha"}
        if unknown:
            raise ConfigError(f"simulation config: unknown key(s) {sorted(unknown)}")
    if args.scenario == "custom":
        if "scenario" not in extra:
            raise ConfigError("--scenario custom needs --config with a 'scenario' object")
        spec = dict(extra["scenario"])
        spec.setdefault("n", args.n)
        if args.zeta is not None:
            spec["zeta"] = args.zeta
        scenario = ScenarioConfig.from_dict(spec)
    else:
        if "scenario" in extra:
            raise ConfigError("'scenario' parameters are only accepted with --scenario custom")
        scenario = named_scenario(args.scenario, args.n, args.zeta)
        if args.zeta not in (None, 0.0) and scenario.family == "responder":
            raise ConfigError("scenarios 1 and 2 have no zeta parameter")
    regimes = extra.get("regimes")
    if args.arbitrary_regimes:
        if scenario.family != "competing":
            raise ConfigError("--arbitrary-regimes applies to the scenario 3 family")
        regimes = list(ARBITRARY_REGIMES)
    regime_set = args.regime_set if args.regime_set is not None else extra.get("regime_set")
    variants = extra.get("variants", list(MC_VARIANTS))
    alpha = extra.get("alpha", 0.05)
    return scenario, regimes, regime_set, variants, alpha


def cmd_simulate(args) -> int:
    scenario, regimes, regime_set, variants, alpha = _simulation_inputs(args)
    report = monte_carlo(scenario, args.reps, variants, master_seed=args.seed,
                         threads=args.threads, alpha=alpha, regimes=regimes,
                         regime_set=regime_set)
    atomic_write_text(args.out, report.to_csv())
    meta = report.metadata()
    meta.update({"variants": list(variants), "regimes": regimes, "threads": args.threads,
                 "command": "simulate"})
    atomic_write_text(args.out + ".meta.json", _json_text(meta))
    if report.errors:
        log.warning("%d of %d replicates failed; see %s.meta.json",
                    len(report.errors), report.requested, args.out)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    if args.scenario is not None:
        rates = scenario_rates(named_scenario(args.scenario))
    else:
        rates = {"law": args.law or "responder", "lambda1": args.lambda1,
                 "lambda2": args.lambda2, "lambda3": args.lambda3, "pi_r": args.pi_r,
                 "u_max": args.u_max}
        missing = [k for k in ("lambda1", "lambda2", "lambda3") if rates[k] is None]
        if missing:
            raise UsageError("diagnose-hazards needs --scenario or all of "
                             "--lambda1 --lambda2 --lambda3")
        if rates["u_max"] is None:
            raise UsageError("diagnose-hazards needs --u-max when rates are given directly")
    for key in ("law", "pi_r", "u_max"):
        override = getattr(args, key)
        if override is not None:
            rates[key] = override
    grid = np.linspace(0.0, float(rates["u_max"]), args.points)
    curves = hazard_diagnostics(rates["lambda1"], rates["lambda2"], rates["lambda3"],
                                rates["pi_r"], grid, law=rates["law"])
    atomic_write_text(args.out, curves.to_csv())
    meta = dict(rates, points=args.points, scenario=args.scenario)
    atomic_write_text(args.out + ".meta.json", _json_text(meta))
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg, cohort = _load(args)
    summary = {
        "n": cohort.n,
        "events": int(cohort.delta.sum()),
        "kappa_counts": {str(k): int((cohort.kappa == k).sum()) for k in range(1, cfg.design.K + 1)},
        "analysis": cfg.to_dict(),
        "data": os.path.abspath(args.data),
    }
    if args.out:
        atomic_write_text(args.out, _json_text(summary))
    print(f"ok: {cohort.n} subjects, {summary['events']} events")
    return EXIT_OK


_COMMANDS = {"test": cmd_test, "curves": cmd_curves, "simulate": cmd_simulate,
             "diagnose-hazards": cmd_diagnose, "validate": cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:          # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("regimetest: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=_LEVELS[args.log_level], format="%(levelname)s: %(message)s",
                        stream=sys.stderr, force=True)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"regimetest {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"regimetest {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"regimetest {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"regimetest {args.command}: error: {exc.filename}: file not found", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"regimetest {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":          # pragma: no cover
    sys.exit(main())
