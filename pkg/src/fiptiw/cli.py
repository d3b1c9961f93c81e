"""Command-line surface.

Four subcommands: ``simulate`` writes one generated panel as CSV,
``run-sim`` runs a full Monte Carlo study and writes its metric tables,
``analyze`` runs the observational pipeline on user data, and ``weights``
dumps the weight sets an analysis would use.

Exit codes are a stable contract for scripting: 0 success, 2 configuration
error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .analysis import AnalyzeConfig, analyze, computed_weights, write_analysis_csv, write_weights_csv
from .errors import (
    BoundViolationError,
    ConfigError,
    ConvergenceError,
    DataError,
    PositivityError,
    RankError,
    SeparationError,
)
from .experiments import (
    ScenarioSpec,
    aggregate,
    emit_plot_data,
    extremity_summary,
    run_scenarios,
    sim1_grid,
    sim2_grid,
    sim3_grid,
    validate_scenario,
    write_extremity_csv,
    write_metrics_csv,
    write_replications_csv,
)
from .panel import write_panel_csv
from .simgen import (
    DgpSpec,
    HazardCensoring,
    LogisticTreatment,
    NoCensoring,
    RandomizedTreatment,
    RngStream,
    UniformCensoring,
    gen_panel,
)

__all__ = ["main"]

_NUMERICAL_FAILURES = (
    ConvergenceError,
    SeparationError,
    PositivityError,
    RankError,
    BoundViolationError,
)


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return raw


def _reject_unknown(raw: dict, allowed, what: str) -> None:
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {what} keys: {', '.join(unknown)}")


def _treatment_from_json(raw) -> RandomizedTreatment | LogisticTreatment:
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ConfigError('treatment must be an object with a "kind"')
    kind = raw["kind"]
    if kind == "randomized":
        _reject_unknown(raw, ("kind", "probability"), "treatment")
        return RandomizedTreatment(float(raw.get("probability", 0.5)))
    if kind == "logistic":
        _reject_unknown(raw, ("kind", "intercept", "slope"), "treatment")
        try:
            return LogisticTreatment(float(raw["intercept"]), float(raw["slope"]))
        except KeyError as exc:
            raise ConfigError(f"logistic treatment needs {exc.args[0]}")
    raise ConfigError(f"unknown treatment kind {kind!r}")


def _censoring_from_json(raw):
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ConfigError('censoring must be an object with a "kind"')
    kind = raw["kind"]
    if kind == "uniform":
        _reject_unknown(raw, ("kind",), "censoring")
        return UniformCensoring()
    if kind == "none":
        _reject_unknown(raw, ("kind",), "censoring")
        return NoCensoring()
    if kind == "hazard":
        _reject_unknown(raw, ("kind", "effects"), "censoring")
        if "effects" not in raw:
            raise ConfigError("hazard censoring needs effects")
        return HazardCensoring(tuple(raw["effects"]))
    raise ConfigError(f"unknown censoring kind {kind!r}")


_DGP_KEYS = (
    "n", "treatment", "censoring", "intensity_effects", "outcome_effects",
    "tau", "frailty_variance", "random_intercept_variance", "noise_variance",
    "z_means", "z_variances",
)


def _dgp_from_json(raw: dict) -> DgpSpec:
    _reject_unknown(raw, _DGP_KEYS, "generator spec")
    if "n" not in raw:
        raise ConfigError("generator spec needs n")
    kwargs = {"n": int(raw["n"])}
    if "treatment" in raw:
        kwargs["treatment"] = _treatment_from_json(raw["treatment"])
    if "censoring" in raw:
        kwargs["censoring"] = _censoring_from_json(raw["censoring"])
    for name in ("intensity_effects", "outcome_effects", "z_means", "z_variances"):
        if name in raw:
            kwargs[name] = tuple(raw[name])
    for name in ("tau", "frailty_variance", "random_intercept_variance", "noise_variance"):
        if name in raw:
            kwargs[name] = float(raw[name])
    try:
        return DgpSpec(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad generator spec: {exc}")


_SCENARIO_KEYS = {
    1: ("censoring_effects",),
    2: ("g_intensity_coef", "g_outcome_coef"),
    3: ("treatment_level", "observation_level"),
}


def _scenarios_from_json(raw: dict, study: int, reps: int, seed: int) -> list[ScenarioSpec]:
    _reject_unknown(raw, ("n", "scenarios"), "study spec")
    n = int(raw.get("n", 100))
    entries = raw.get("scenarios")
    if entries is None:
        grid = {1: sim1_grid, 2: sim2_grid, 3: sim3_grid}[study]
        return list(grid(n=n, replications=reps, seed=seed))
    if not isinstance(entries, list) or not entries:
        raise ConfigError("scenarios must be a non-empty list")
    specs = []
    for k, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ConfigError("each scenario must be an object")
        _reject_unknown(entry, _SCENARIO_KEYS[study] + ("n",), "scenario")
        knobs = {name: entry[name] for name in _SCENARIO_KEYS[study] if name in entry}
        if study == 1 and "censoring_effects" in knobs:
            knobs["censoring_effects"] = tuple(knobs["censoring_effects"])
        specs.append(
            ScenarioSpec(
                study=study,
                n=int(entry.get("n", n)),
                replications=reps,
                seed=seed,
                scenario_index=k,
                **knobs,
            )
        )
    return specs


# ----------------------------------------------------------------- commands


def _cmd_simulate(args) -> None:
    spec = _dgp_from_json(_load_json(args.spec))
    panel = gen_panel(spec, RngStream(args.seed))
    os.makedirs(args.out, exist_ok=True)
    write_panel_csv(
        panel,
        os.path.join(args.out, "observations.csv"),
        os.path.join(args.out, "subjects.csv"),
    )


def _cmd_run_sim(args) -> None:
    raw = _load_json(args.spec) if args.spec else {}
    scenarios = _scenarios_from_json(raw, args.study, args.reps, args.seed)
    for spec in scenarios:
        validate_scenario(spec, allow_custom=args.allow_custom)
    results = run_scenarios(scenarios, workers=args.workers)
    table = aggregate(results)
    extremity = extremity_summary(results)
    os.makedirs(args.out, exist_ok=True)
    write_metrics_csv(table, os.path.join(args.out, f"metrics_{args.study}.csv"))
    write_replications_csv(results, os.path.join(args.out, f"replications_{args.study}.csv"))
    write_extremity_csv(extremity, os.path.join(args.out, f"weights_extremity_{args.study}.csv"))
    emit_plot_data(table, os.path.join(args.out, f"plot_data_{args.study}.csv"))


def _cmd_analyze(args) -> None:
    config = AnalyzeConfig.from_mapping(_load_json(args.config))
    result = analyze(config)
    os.makedirs(args.out, exist_ok=True)
    write_analysis_csv(result, os.path.join(args.out, "analysis.csv"))
    summary = {
        "censoring_cutoff": result.censoring_cutoff,
        "n_subjects": result.n_subjects,
        "n_observations": result.n_observations,
        "spline_knots": list(result.spline_knots),
        "rows": [
            {
                "method": r.method,
                "estimate": r.estimate,
                "se": r.se,
                "ci_lower": r.ci_lower,
                "ci_upper": r.ci_upper,
                "odds_ratio": r.odds_ratio,
                "or_ci_lower": r.or_ci_lower,
                "or_ci_upper": r.or_ci_upper,
                "n_obs": r.n_obs,
                "sum_weights": r.sum_weights,
                "converged": r.converged,
            }
            for r in result.rows
        ],
    }
    with open(os.path.join(args.out, "analysis.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")


def _cmd_weights(args) -> None:
    config = AnalyzeConfig.from_mapping(_load_json(args.config))
    write_weights_csv(computed_weights(config), args.dump)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fiptiw",
        description="Weighted estimation for irregular longitudinal data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate one panel and write it as CSV")
    p.add_argument("--spec", required=True, help="generator spec (JSON)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("run-sim", help="run one simulation study")
    p.add_argument("--study", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--spec", help="study spec (JSON); defaults to the full grid")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--allow-custom", action="store_true",
                   help="accept scenarios off the supported grids")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_run_sim)

    p = sub.add_parser("analyze", help="observational analysis from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_analyze)

    p = sub.add_parser("weights", help="dump the weight sets an analysis would use")
    p.add_argument("--config", required=True)
    p.add_argument("--dump", required=True, help="output CSV path")
    p.set_defaults(fn=_cmd_weights)

    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except _NUMERICAL_FAILURES as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
