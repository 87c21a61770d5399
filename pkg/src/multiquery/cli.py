"""Command-line entry point: ``multiquery run | validate | show``."""

import argparse
import json
import logging
import sys

import numpy as np

from multiquery.workflow import ConfigError, ResultsError, build_plan, load_config, read_results, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _parser():
    parser = argparse.ArgumentParser(prog="multiquery", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a run configuration")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", default=None)
    p_run.add_argument("--max-concurrent", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p_val = sub.add_parser("validate", help="parse and wire a configuration without running it")
    p_val.add_argument("config")
    p_show = sub.add_parser("show", help="summarize a results file")
    p_show.add_argument("results")
    return parser


def _summary(artifact):
    statuses = artifact.statuses
    out = {
        "run_name": artifact.meta.get("run_name"),
        "method": artifact.meta.get("method"),
        "seed": artifact.meta.get("seed"),
        "rows": len(statuses),
        "counts": {s: statuses.count(s) for s in sorted(set(statuses))},
        "parameters": list(artifact.sample_names),
    }
    for key in ("log_evidence", "x", "fun", "reason", "mean", "std", "acceptance_rate", "indices"):
        if key in artifact.method_results:
            out[key] = artifact.method_results[key]
    return out


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(type(obj).__name__)


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "show":
        try:
            artifact = read_results(args.results)
        except ResultsError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print(json.dumps(_summary(artifact), indent=2, default=_jsonable))
        return EXIT_OK
    try:
        config = load_config(args.config)
        if args.command == "validate":
            plan = build_plan(config)
            print(f"configuration valid: method '{plan.method_name}' ({plan.method['type']}), "
                  f"{len(plan.describe())} wired blocks")
            return EXIT_OK
        plan = build_plan(config, output_dir=args.output_dir, max_concurrent=args.max_concurrent, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logger = logging.getLogger("multiquery")
    logger.setLevel(args.log_level)
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    console.setLevel(args.log_level)
    if args.log_level != "DEBUG":
        # per-job transitions go to the run log; the console keeps the summary
        console.addFilter(lambda r: r.name != "multiquery.scheduler" or r.levelno >= logging.WARNING)
    logger.addHandler(console)
    try:
        artifact = run(plan)
    except Exception as exc:  # any method failure maps to the runtime exit code
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        logger.removeHandler(console)
    print(f"results written to {plan.output_dir}")
    print(json.dumps(_summary(artifact), indent=2, default=_jsonable))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
