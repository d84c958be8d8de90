"""Command line entry point: one subcommand per experiment.

Exit codes: 0 on success, 2 when a sweep completed with flagged rows
(e.g. cross approximation hit its budget before converging), 1 on fatal
errors.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import (
    apply_overrides,
    default_config,
    load_config_file,
    run_experiment,
)

_SUBCOMMANDS = {
    "low-rank": "low_rank_sweep",
    "exp-decay": "exp_decay_sweep",
    "dimension": "dimension_sweep",
    "domain-size": "domain_size",
    "filtering": "filtering",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttgauss",
        description="Tensor-train rank experiments for Gaussian densities",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, experiment in _SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run the {experiment} experiment")
        p.set_defaults(experiment=experiment)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, help="base seed for all realizations")
        p.add_argument("--out-dir", help="directory for CSV output")
        p.add_argument("--paper-scale", action="store_true",
                       help="use the full-scale parameter sets (slow)")
        p.add_argument("--max-evals", type=int,
                       help="cap on oracle evaluations per cross approximation")
        p.add_argument("--jobs", type=int, help="parallel workers for realizations")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = default_config(args.experiment, paper_scale=args.paper_scale)
        if args.config:
            cfg = apply_overrides(cfg, load_config_file(args.config))
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out_dir is not None:
            overrides["out_dir"] = args.out_dir
        if args.max_evals is not None:
            overrides["max_evals"] = args.max_evals
        if args.jobs is not None:
            overrides["jobs"] = args.jobs
        if overrides:
            cfg = apply_overrides(cfg, overrides)
        result = run_experiment(cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in result.csv_paths:
        print(path)
    if result.flagged:
        print(f"warning: {result.flagged} realization(s) flagged as "
              f"non-converged", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
