"""Command-line entry point: ``ergodic-bem <subcommand> [--config FILE] [overrides]``."""

import argparse
import json
import logging
import sys

from .errors import ConfigurationError
from .experiments import EXIT_INVALID, EXPERIMENTS, load_config, run, run_suite

# flag -> (config key, type, help)
_OVERRIDES = [
    ("--model", "model", str, "model id: example51, example52 or ou"),
    ("--theta", "theta", float, "OU mean-reversion rate"),
    ("--s", "s", float, "OU noise intensity"),
    ("--h", "h", str, "test function averaged along paths"),
    ("--f", "f", str, "comma-separated functions applied to Z"),
    ("--alpha", "alpha", float, "deviation order parameter in (1, 2]"),
    ("--tau", "tau", float, "step size"),
    ("--taus", "taus", str, "comma-separated step sizes (descending)"),
    ("--tau-ref", "tau_ref", float, "reference step size"),
    ("--horizon", "horizon", float, "time horizon T"),
    ("--paths", "n_paths", int, "number of Monte-Carlo paths"),
    ("--x0", "x0", str, "initial state"),
    ("--x0-list", "x0_list", str, "comma-separated initial states"),
    ("--y0", "y0", str, "second initial state for coupled paths"),
    ("--pi-h", "pi_h", str, "ergodic limit of h, or 'estimate'"),
    ("--variance", "variance", str, "reference CLT variance, or 'estimate'"),
    ("--grid", "grid", str, "Poisson grid as a,b,n"),
    ("--t-trunc", "t_trunc", float, "truncation time of the Poisson integral"),
    ("--quad-tau", "quad_tau", float, "inner step size of the Poisson integral"),
    ("--inner-paths", "n_inner_paths", int, "inner paths per grid point"),
    ("--steps", "n_steps", int, "number of steps (moment-scan, variance)"),
    ("--burn-in", "burn_in", int, "burn-in steps"),
    ("--record-every", "record_every", int, "keep every k-th step of a curve"),
    ("--table", "table", str, "precomputed Poisson table CSV"),
]


def _add_common(p):
    p.add_argument("--config", help="flat YAML file with one experiment")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", help="worker processes (integer or 'auto'); "
                                     "defaults to $ERGODIC_BEM_WORKERS or 1")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ergodic-bem",
        description="Backward Euler-Maruyama temporal averages, CLT diagnostics and "
                    "Poisson-equation tools for ergodic SDEs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        _add_common(p)
        for flag, key, typ, text in _OVERRIDES:
            p.add_argument(flag, dest=key, type=typ, help=text)
    p = sub.add_parser("suite", help="run an acceptance suite and report per-criterion verdicts")
    p.add_argument("suite", choices=["properties", "paper-figures", "paper-tables", "all"])
    p.add_argument("--profile", choices=["desk", "full"], default="desk")
    p.add_argument("--criteria", help="comma-separated subset of criterion numbers")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--workers")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "suite":
        numbers = [int(c) for c in args.criteria.split(",")] if args.criteria else None
        try:
            status, report = run_suite(args.suite, args.profile, args.out, args.workers,
                                       args.seed, numbers)
        except ConfigurationError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
        for c in report["criteria"]:
            failed = [k for k, ok in c["checks"].items() if not ok]
            verdict = "PASS" if c["passed"] else "FAIL"
            extra = f" failed: {', '.join(failed)}" if failed else ""
            if c["error"]:
                extra = f" error: {c['error']}"
            print(f"[{verdict}] criterion {c['number']}: {c['title']}{extra}")
        return status
    overrides = {key: getattr(args, key) for _, key, _, _ in _OVERRIDES}
    overrides.update(seed=args.seed, out=args.out, workers=args.workers)
    try:
        cfg = load_config(args.config, overrides, experiment=args.command)
    except (ConfigurationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    result = run(cfg)
    if result.status:
        print(f"error: {json.dumps(result.error)}", file=sys.stderr)
    else:
        print(result.csv_path)
    return result.status


if __name__ == "__main__":
    sys.exit(main())
