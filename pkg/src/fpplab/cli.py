"""Command line entry point: ``fpp-lab <experiment|run|verify> ...``."""
from __future__ import annotations

import argparse
import sys

from .errors import FPPError, ValidationError
from .harness import KINDS, load_experiment, run_experiment
from .seeding import default_threads
from .verify import SUITES, run_suite


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpp-lab", description="First-passage percolation geodesic laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in KINDS + ("run",):
        p = sub.add_parser(name, help=f"run a {name} experiment" if name != "run" else "run the experiment named in the config")
        p.add_argument("--config", required=True, help="key = value experiment file")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: $FPP_LAB_THREADS or 1)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default="fpp-out", help="output directory")
    v = sub.add_parser("verify", help="run a property suite")
    v.add_argument("--suite", choices=sorted(SUITES), required=True)
    v.add_argument("--fault", choices=["corrupt-weights"], default=None, help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        kwargs = {}
        if args.fault == "corrupt-weights":
            if args.suite != "metric":
                print("fault injection applies to the metric suite only", file=sys.stderr)
                return 2
            kwargs["fault"] = True
        return 0 if run_suite(args.suite, **kwargs) else 1
    threads = default_threads() if args.threads is None else args.threads
    if threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        cfg = load_experiment(args.config, None if args.command == "run" else args.command, args.seed)
    except ValidationError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    try:
        info = run_experiment(cfg, args.out, threads)
    except FPPError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # report, never traceback at the user
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"{cfg.kind} run {info['run_id']}: {info['jsonl']} {info['csv']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
