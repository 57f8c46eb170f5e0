"""Command line interface.

Verbs: ``run`` (full experiment), ``trial`` (single verbose trial),
``presilience`` (standalone P_r query for a robot placement), ``validate``
(scenario lint). Exit codes: 2 scenario/config error, 3 output IO error,
4 infeasible scenario.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .harness import (
    OutputError,
    ScenarioError,
    build_world,
    comm_field_for,
    emit_outputs,
    load_scenario,
    run_experiment,
    run_trial,
)
from .resilience import GraphTooLargeError, build_prob_graph, prob_resilience

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INFEASIBLE = 4


def _add_scenario_arg(parser):
    parser.add_argument("--scenario", required=True, help="scenario YAML file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmipp",
        description="Resilient multi-robot informative path planning simulator",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run the Monte Carlo experiment")
    _add_scenario_arg(run)
    run.add_argument("--out", default="out", help="output directory")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.add_argument("--trials", type=int, default=None, help="override trial count")
    run.add_argument("--mode", choices=("wmsr", "linear", "both"), default=None)

    trial = sub.add_parser("trial", help="run one trial verbosely")
    _add_scenario_arg(trial)
    trial.add_argument("--index", type=int, default=0, help="trial index")
    trial.add_argument("--mode", choices=("wmsr", "linear", "both"), default=None)

    pres = sub.add_parser("presilience", help="probability of resilience at a placement")
    _add_scenario_arg(pres)
    pres.add_argument("--positions", required=True,
                      help="comma-separated location ids, one per robot")
    pres.add_argument("--r", type=int, default=None)
    pres.add_argument("--s", type=int, default=None)
    pres.add_argument("--method", choices=("exact", "monte_carlo"), default="exact")
    pres.add_argument("--samples", type=int, default=100_000)
    pres.add_argument("--seed", type=int, default=0)

    val = sub.add_parser("validate", help="lint a scenario file")
    _add_scenario_arg(val)
    return parser


def _modes(scenario, override):
    mode = override or scenario.mode
    return ("wmsr", "linear") if mode == "both" else (mode,)


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    for w in scenario.warnings:
        print(f"warning: {w}", file=sys.stderr)
    report = run_experiment(scenario, workers=args.workers,
                            modes=_modes(scenario, args.mode), trials=args.trials)
    if report.n_invalid == len(report.metrics):
        print("error: every trial was infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE
    written = emit_outputs(report, fmt=args.format, out_dir=args.out)
    for row in report.table1:
        print(f"[table1] rule={row['rule']:>2s} err_sk={row['err_sk_mean']:.4f} "
              f"err_lk={row['err_lk_mean']:.4f} err_y={row['err_y_mean']:.4f}")
    for row in report.table2:
        print(f"[table2] {row['subarea']:>7s} P_r={row['p_r_mean']:.4f} "
              f"rounds={row['rounds_mean']:.3f}")
    if report.unreliable:
        print(f"warning: {report.n_invalid} invalid trials; report flagged unreliable",
              file=sys.stderr)
    print(f"wrote {len(written)} files under {args.out}")
    return 0


def cmd_trial(args) -> int:
    scenario = load_scenario(args.scenario)
    for w in scenario.warnings:
        print(f"warning: {w}", file=sys.stderr)
    metrics = run_trial(scenario, args.index, modes=_modes(scenario, args.mode))
    print(f"trial {metrics.trial_index} valid={metrics.valid} "
          f"true_s={metrics.true_s:.4f} true_l={metrics.true_l:.4f}")
    if not metrics.valid:
        print(f"infeasible: {metrics.note}", file=sys.stderr)
        return EXIT_INFEASIBLE
    for name, errs in (("wmsr", metrics.wmsr), ("linear", metrics.linear)):
        if errs is None:
            continue
        print(f"  {name:>6s}: err_sk={errs.err_sk:.4f} err_lk={errs.err_lk:.4f} "
              f"err_y={errs.err_y:.4f} rounds={errs.consensus_rounds:.2f} "
              f"converged={errs.consensus_converged}")
    print(f"  P_r: sb*={metrics.p_r_star:.4f} sb^r={metrics.p_r_rand:.4f}")
    print(f"  retransmissions: sb*={metrics.rounds_star:.3f} "
          f"sb^r={metrics.rounds_rand:.3f}")
    return 0


def cmd_presilience(args) -> int:
    scenario = load_scenario(args.scenario)
    world = build_world(scenario)
    field = comm_field_for(scenario, world)
    positions = [int(tok) for tok in args.positions.split(",") if tok.strip()]
    pg = build_prob_graph(field, positions)
    r = args.r if args.r is not None else scenario.r
    s = args.s if args.s is not None else scenario.s
    res = prob_resilience(pg, r, s, method=args.method, samples=args.samples,
                          rng=np.random.default_rng(args.seed))
    print(f"P_r({r},{s}) = {res.value:.6f} +- {res.std_error:.6f} [{res.method}]")
    return 0


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    for w in scenario.warnings:
        print(f"warning: {w}")
    print(f"scenario OK: {scenario.width}x{scenario.height} grid, "
          f"n={scenario.n} n_a={scenario.n_a} F={scenario.F} "
          f"(r,s)=({scenario.r},{scenario.s}) trials={scenario.trials}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": cmd_run,
        "trial": cmd_trial,
        "presilience": cmd_presilience,
        "validate": cmd_validate,
    }
    try:
        return handlers[args.verb](args)
    except (ScenarioError, GraphTooLargeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
