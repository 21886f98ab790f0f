"""Command line front end.

One subcommand per pipeline stage plus `reproduce`, which chains the
stages needed for a given figure's data bundle.  All physics numbers come
from the config file (or its defaults); the flags only select what to run,
where to write, and the ensemble scale.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import runner
from .config import (
    COMBINATIONS,
    FULL_SCALE_CANDIDATES,
    FULL_SCALE_RECORDS,
    SimConfig,
    split_combination,
)

WORKERS_ENV = "QSMOOTH_WORKERS"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="INI config file (defaults used when absent)")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument(
        "--combination",
        metavar="dOdU",
        help=f"observed/unobserved pair, one of {', '.join(COMBINATIONS)}",
    )
    parser.add_argument(
        "--out-dir", metavar="DIR", help="output root (default: out)"
    )
    parser.add_argument(
        "--workers",
        type=int,
        default=1,
        help=f"worker processes for batch stages; {WORKERS_ENV} overrides",
    )
    parser.add_argument(
        "--paper-scale",
        action="store_true",
        help=f"headline ensemble sizes ({FULL_SCALE_RECORDS} records, "
        f"{FULL_SCALE_CANDIDATES} candidates)",
    )


def build_config(args: argparse.Namespace) -> SimConfig:
    config = SimConfig.from_ini(args.config) if args.config else SimConfig()
    changes: dict = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.combination:
        observed, unobserved = split_combination(args.combination)
        changes["observed"] = observed
        changes["unobserved"] = unobserved
    if args.paper_scale:
        changes["n_records"] = FULL_SCALE_RECORDS
        changes["n_candidates"] = FULL_SCALE_CANDIDATES
    return config.replace(**changes) if changes else config


def resolve_workers(args: argparse.Namespace) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env is not None and env.strip():
        return max(1, int(env))
    return max(1, args.workers)


def _out_dir(args: argparse.Namespace) -> str:
    return args.out_dir if args.out_dir else "out"


def cmd_steady(args) -> int:
    report = runner.steady_report(build_config(args))
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out_dir:
        path = os.path.join(args.out_dir, "steady.json")
        os.makedirs(args.out_dir, exist_ok=True)
        runner.write_json(path, report)
        print(f"wrote {path}")
    return 0


def cmd_simulate(args) -> int:
    config = build_config(args)
    manifest = runner.simulate_batch(config, _out_dir(args), workers=resolve_workers(args))
    print(
        f"simulated {manifest['n_computed']} of {config.n_records} runs for "
        f"{config.combination} -> {runner.combo_dir(_out_dir(args), config)}"
    )
    return 0


def cmd_smooth(args) -> int:
    config = build_config(args)
    manifest = runner.smooth_batch(config, _out_dir(args), workers=resolve_workers(args))
    print(
        f"smoothed {manifest['n_computed']} of {config.n_records} runs for "
        f"{config.combination} with {config.n_candidates} candidates"
    )
    return 0


def cmd_metrics(args) -> int:
    config = build_config(args)
    manifest = runner.metrics_batch(config, _out_dir(args), reference=args.reference)
    print(json.dumps(manifest["summary"], indent=2, sort_keys=True))
    return 0


def cmd_correlators(args) -> int:
    path = runner.correlator_tables(build_config(args), _out_dir(args), n_tau=args.n_tau)
    print(f"wrote {path}")
    return 0


def cmd_predict(args) -> int:
    config = build_config(args)
    path = runner.prediction_table(config, _out_dir(args))
    table = json.loads(open(path).read())
    for row in table:
        level = row["level"] if row["level"] is not None else "unclassified"
        print(f"{row['combination']}: level {level}")
    print(f"wrote {path}")
    return 0


def cmd_reproduce(args) -> int:
    config = build_config(args)
    written = runner.reproduce_figure(
        args.figure, config, _out_dir(args), workers=resolve_workers(args)
    )
    for path in written:
        print(f"wrote {path}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsmooth",
        description="Trajectory simulation and smoothing analysis for a partially observed qubit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    commands = {
        "steady": (cmd_steady, "print the steady state, its purity and the channel click rates"),
        "simulate": (cmd_simulate, "generate true trajectories and measurement records"),
        "smooth": (cmd_smooth, "run the candidate-ensemble smoother over simulated records"),
        "metrics": (cmd_metrics, "aggregate per-run outputs into recovery curves"),
        "correlators": (cmd_correlators, "tabulate the analytic record correlators"),
        "predict": (cmd_predict, "classify all nine combinations by correlator structure"),
        "reproduce": (cmd_reproduce, "run every stage needed for one figure's data bundle"),
    }
    for name, (func, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        p.set_defaults(func=func)
        if name == "metrics":
            p.add_argument(
                "--reference",
                choices=runner.REFERENCE_CHOICES,
                default="auto",
                help="true-purity reference for the relative recovery",
            )
        if name in ("correlators", "predict"):
            p.add_argument("--n-tau", type=int, default=300, help="lag grid size")
        if name == "reproduce":
            p.add_argument(
                "--figure",
                type=int,
                required=True,
                choices=sorted(runner.FIGURE_COMBINATIONS),
                help="figure id whose data bundle to produce",
            )
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
