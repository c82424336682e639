"""Command-line interface.

Exit codes: 0 success, 2 configuration/usage error, 1 runtime failure.
"""

import argparse
import dataclasses
import os
import sys

from . import bench, models
from .bench import ConfigError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="norh",
                                     description="Failure-probability estimation bench")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a configured experiment")
    run.add_argument("--config", required=True, help="experiment config file")
    run.add_argument("--method", choices=["noh", "nh", "mcs"],
                     help="override the configured surrogate kind")
    run.add_argument("--seed-sampling", type=int)
    run.add_argument("--seed-init", type=int)
    run.add_argument("--seed-training", type=int)
    run.add_argument("--out", help="output directory (default: NORH_OUT_DIR or ./out)")

    trace = sub.add_parser("trace", help="re-emit the convergence CSV of a saved run")
    trace.add_argument("--run", required=True, help="run output directory")

    oracle = sub.add_parser("oracle", help="print the reference failure probability")
    oracle.add_argument("--experiment", required=True,
                        choices=["ode", "multivariate", "helmholtz1d"])
    return parser


def _cmd_run(args) -> int:
    cfg = bench.parse_config(args.config)
    overrides = {}
    if args.seed_sampling is not None:
        overrides["sampling"] = args.seed_sampling
    if args.seed_init is not None:
        overrides["init"] = args.seed_init
    if args.seed_training is not None:
        overrides["training"] = args.seed_training
    if overrides:
        cfg = dataclasses.replace(cfg, seeds=dataclasses.replace(cfg.seeds, **overrides))
    out_dir = args.out or os.environ.get("NORH_OUT_DIR") or "out"
    report, _ = bench.run_experiment(cfg, out_dir=out_dir, method=args.method)
    err = report.rel_error
    err_text = f"{100 * err:.4g}%" if err is not None else "n/a"
    print(f"method={report.method} p_f={report.p_f:.6g} "
          f"pf_calls={report.pf_calls_training}+{report.pf_calls_evaluating} "
          f"rel_error={err_text} wall={report.wall_time:.2f}s")
    print(f"artifacts written to {out_dir}")
    return 0


def _cmd_trace(args) -> int:
    path = os.path.join(args.run, "trace.csv")
    if not os.path.exists(path):
        raise ConfigError(f"no trace.csv in {args.run}")
    with open(path) as f:
        sys.stdout.write(f.read())
    return 0


def _cmd_oracle(args) -> int:
    if args.experiment == "ode":
        value = models.analytic_failure_probability(
            models.OdeDecayModel(),
            bench.build_spec(bench.ExperimentConfig(experiment="ode")))
    elif args.experiment == "multivariate":
        value = models.analytic_failure_probability(models.MultivariateLinearModel())
    else:
        value = bench.HELMHOLTZ1D_REFERENCE_PF
    print(f"{value:.17g}")
    return 0


def cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "trace":
            return _cmd_trace(args)
        return _cmd_oracle(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
