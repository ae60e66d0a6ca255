"""Command-line front end: simulate, estimate, scenario, diagnose.

Every run is described by one JSON object (``--config``); scalar fields can
be overridden with flags or ``--set key=value``. Exit codes: 0 success,
1 runtime or domain failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import inference, montecarlo
from .estimator import functional_estimate
from .glim import DomainError, RegressionFrame, get_model
from .sis import SimulationError, simulate_epidemic
from .weights import WeightScheme, cumulated_sums

logger = logging.getLogger("tlml")

COMMANDS = ("simulate", "estimate", "scenario", "diagnose")

KEY_HELP = {
    "design": "parameter dynamics: constant | log_ar1 | ulr_ou (default constant)",
    "n": "population size (default 5000)",
    "N2_0": "initial number of infected (default 85)",
    "T": "last date (default 600)",
    "a_star": "long-run contagion rate a (default 0.2)",
    "c": "recovery rate; null means 0.98 * a_star",
    "rho_a": "log-AR(1) persistence of a_t (default 0.99)",
    "sigma": "log-AR(1) innovation sd of a_t (default 0.01)",
    "ou_k": "OU mean reversion for the ulr_ou design (default 10)",
    "ou_eta": "OU volatility for the ulr_ou design (default 0.1)",
    "schemes": "list of weight schemes: a number is a geometric rho, an object is "
               '{"type": uniform|rolling|geometric|hyperbolic|kernel, ...} (default [0.1, 0.5, 0.9])',
    "law": "count transition law: binomial | poisson | poisson_positive (default binomial)",
    "model": "likelihood family: poisson | poisson_gaussian (default poisson)",
    "t_min": "first estimation date (default 100)",
    "replications": "number of simulated paths (default 1)",
    "seed": "master seed; required for simulate and scenario",
    "workers": "worker processes for replications (default 1); output does not depend on it",
    "acf_max_lag": "largest lag in ACF outputs (default 20)",
    "trim": "lower and upper trimming quantiles for statistics (default [0.005, 0.995])",
    "replication": "replication index used by simulate (default 0)",
    "path": "input path CSV for estimate and diagnose",
    "out": "output directory",
    "level_mult": "interval multiplier for diagnose (default 2)",
}

SCENARIO_KEYS = {f.name for f in fields(montecarlo.ScenarioConfig)}
RUN_KEYS = {"replication", "path", "out", "level_mult"}


class ConfigError(ValueError):
    """Invalid configuration; reported with exit code 2."""


@dataclass
class RunConfig:
    command: str
    scenario: montecarlo.ScenarioConfig
    out: str | None = None
    path: str | None = None
    replication: int = 0
    level_mult: float = 2.0
    verbosity: int = 0
    seed_given: bool = False


def _scheme_from(value, where: str) -> WeightScheme:
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number or an object")
    if isinstance(value, (int, float)):
        try:
            return WeightScheme.geometric(float(value))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    if isinstance(value, dict):
        try:
            return WeightScheme.from_dict(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}: expected a number or an object")


_INT_KEYS = {"n", "N2_0", "T", "t_min", "replications", "seed", "workers", "acf_max_lag", "replication"}
_FLOAT_KEYS = {"a_star", "rho_a", "sigma", "ou_k", "ou_eta", "level_mult"}
_STR_KEYS = {"design", "law", "model", "path", "out"}


def _coerce(key: str, value):
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if key == "c":
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"c: expected a number or null, got {value!r}")
        return float(value)
    if key in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if key == "schemes":
        if not isinstance(value, list) or not value:
            raise ConfigError("schemes: expected a nonempty list")
        return tuple(_scheme_from(v, f"schemes[{i}]") for i, v in enumerate(value))
    if key == "trim":
        if not (isinstance(value, list) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value)):
            raise ConfigError("trim: expected a pair of quantiles")
        return (float(value[0]), float(value[1]))
    raise ConfigError(f"unknown key {key!r}")


def build_config(command: str, doc: dict, verbosity: int = 0) -> RunConfig:
    """Validate a config document and fill defaults."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - SCENARIO_KEYS - RUN_KEYS)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    values = {k: _coerce(k, v) for k, v in doc.items()}
    scen_kwargs = {k: v for k, v in values.items() if k in SCENARIO_KEYS}
    try:
        scenario = montecarlo.ScenarioConfig(**scen_kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    seed_given = "seed" in doc
    if command in ("simulate", "scenario") and not seed_given:
        raise ConfigError("seed: required for stochastic runs")
    if command in ("estimate", "diagnose") and not values.get("path"):
        raise ConfigError("path: an input path CSV is required")
    if not values.get("out"):
        raise ConfigError("out: an output directory is required")
    if values.get("replication", 0) < 0:
        raise ConfigError("replication: must be nonnegative")
    return RunConfig(command=command, scenario=scenario, out=values.get("out"), path=values.get("path"),
                     replication=values.get("replication", 0), level_mult=values.get("level_mult", 2.0),
                     verbosity=verbosity, seed_given=seed_given)


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def make_parser() -> argparse.ArgumentParser:
    keys = "\n".join(f"  {k:<13} {v}" for k, v in KEY_HELP.items())
    parser = argparse.ArgumentParser(
        prog="tlml", formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Temporally local maximum likelihood for the stochastic SIS model.",
        epilog=f"config keys (JSON object, flags override):\n{keys}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "simulate one epidemic path and write path.csv",
        "estimate": "estimate a path CSV and write estimates_<scheme>.csv",
        "scenario": "simulate, estimate and summarise a full design",
        "diagnose": "intervals, eigenvalues, bias corrections and prediction residuals for a path CSV",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name],
                           formatter_class=argparse.RawDescriptionHelpFormatter,
                           epilog=f"config keys:\n{keys}")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--T", type=int, help="last date")
        p.add_argument("--replications", type=int, help="number of replications")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--out", help="output directory")
        if name in ("estimate", "diagnose"):
            p.add_argument("--path", help="input path CSV")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (JSON value)")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def parse_config(argv=None) -> RunConfig:
    """Parse command-line arguments and the config file into a RunConfig.

    Raises ConfigError for invalid content; argparse exits with status 2 on
    malformed flags.
    """
    args = make_parser().parse_args(argv)
    doc = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    for key in ("seed", "T", "replications", "workers", "out", "path"):
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    doc.update(_parse_set(args.set))
    return build_config(args.command, doc, verbosity=args.verbose)


def _simulate(cfg: RunConfig) -> None:
    sc = cfg.scenario
    path, params = simulate_epidemic(sc.dynamics(), sc.n, sc.N2_0, sc.T, law=sc.law, seed=sc.seed,
                                     replication=cfg.replication)
    os.makedirs(cfg.out, exist_ok=True)
    montecarlo.write_path(path, params, os.path.join(cfg.out, "path.csv"))


def _read_frame(cfg: RunConfig):
    try:
        N2, n, _, _ = montecarlo.read_path(cfg.path)
    except OSError as exc:
        raise ConfigError(f"cannot read path CSV: {exc}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    T = len(N2) - 1
    if cfg.scenario.t_min > T:
        raise ConfigError(f"t_min={cfg.scenario.t_min} exceeds the last date {T} of the path")
    return RegressionFrame.from_counts(N2, n), T


def _estimate(cfg: RunConfig) -> None:
    frame, T = _read_frame(cfg)
    model = get_model(cfg.scenario.model)
    os.makedirs(cfg.out, exist_ok=True)
    for scheme in cfg.scenario.schemes:
        fe = functional_estimate(model, frame, scheme, cfg.scenario.t_min, T)
        montecarlo.write_estimates(fe, os.path.join(cfg.out, f"estimates_{scheme.label}.csv"))


def _scenario(cfg: RunConfig) -> None:
    result = montecarlo.run_scenario(cfg.scenario)
    montecarlo.write_scenario(result, cfg.out)


def _diagnose(cfg: RunConfig) -> None:
    frame, T = _read_frame(cfg)
    model = get_model(cfg.scenario.model)
    theta_star = inference.pseudo_true(model, frame)
    ci_rows, eig_rows, bias_rows, res_rows = [], [], [], []
    for scheme in cfg.scenario.schemes:
        label = scheme.label
        fe = functional_estimate(model, frame, scheme, cfg.scenario.t_min, T)
        eig = montecarlo.eigen_diagnostics(fe.fits)
        for i, (t, fit) in enumerate(zip(fe.dates, fe.fits)):
            t = int(t)
            if fit is None:
                continue
            ci = inference.confidence_interval(fit, cumulated_sums(scheme, t), cfg.level_mult)
            a_hat, omc = float(fit.theta_hat[0]), float(fit.theta_hat[1])
            ci_rows.append([label, t, a_hat, ci.lower[0], ci.upper[0], 1.0 - omc, 1.0 - ci.upper[1],
                            1.0 - ci.lower[1], ci.available])
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = eig[i, 1] / eig[i, 0]
            eig_rows.append([label, t, eig[i, 0], eig[i, 1], ratio])
            try:
                b = inference.bias_terms(model, frame, scheme, t, fit, theta_star=theta_star)
                bias_rows.append([label, t, b.correction[0], -b.correction[1], ci.half_width[0], ci.half_width[1]])
            except (ValueError, DomainError) as exc:
                logger.info("bias terms unavailable at t=%d: %s", t, exc)
                bias_rows.append([label, t, math.nan, math.nan, ci.half_width[0], ci.half_width[1]])
            if t < T:
                p = inference.predict_counts(frame, fit.theta_hat, t + 1)
                res_rows.append([label, t + 1, p.predicted, p.observed, p.residual])
    os.makedirs(cfg.out, exist_ok=True)
    write = montecarlo.write_csv
    write(os.path.join(cfg.out, "ci.csv"),
          ["scheme", "t", "a_hat", "a_lower", "a_upper", "c_hat", "c_lower", "c_upper", "available"], ci_rows)
    write(os.path.join(cfg.out, "eigen.csv"), ["scheme", "t", "eig1", "eig2", "ratio"], eig_rows)
    write(os.path.join(cfg.out, "bias.csv"), ["scheme", "t", "bias_a", "bias_c", "ci_half_a", "ci_half_c"],
          bias_rows)
    write(os.path.join(cfg.out, "residuals.csv"), ["scheme", "t", "predicted", "observed", "residual"], res_rows)


HANDLERS = {"simulate": _simulate, "estimate": _estimate, "scenario": _scenario, "diagnose": _diagnose}


def run(cfg: RunConfig) -> int:
    """Dispatch a parsed config; returns the process exit code."""
    try:
        HANDLERS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"tlml {cfg.command}: {exc}", file=sys.stderr)
        return 2
    except (DomainError, SimulationError, ValueError, ArithmeticError, OSError, np.linalg.LinAlgError) as exc:
        print(f"tlml {cfg.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"tlml: configuration error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(cfg.verbosity, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
