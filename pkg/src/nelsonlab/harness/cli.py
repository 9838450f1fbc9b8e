"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 suite failure,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConvergenceError, TruncationError
from .checks import run_check
from .config import ConfigError, RunConfig, from_dict, load_config, validate
from .runner import (RunError, atomic_write, run_effective, run_microscopic, run_sweep,
                     summary_json, write_result)

EXIT_OK, EXIT_USAGE, EXIT_SUITE, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("nelsonlab")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nelsonlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("effective", "integrate the mean-field equations"),
                        ("microscopic", "propagate the many-body model with matched mean field"),
                        ("sweep", "(N, Lambda, t) sweep with envelope fits and N-trend"),
                        ("check", "run the invariant suites")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file (defaults used when omitted)")
        p.add_argument("--out", help="output path; CSV and JSON summary share its stem")
        p.add_argument("--workers", type=int, help="parallel worker processes")
        p.add_argument("--seed", type=int, help="random seed (u64)")
        p.add_argument("--mutation", help="fault injection for check (e.g. flip_dbeta_b_source)")
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else from_dict({"kind": args.command})
    if args.config and cfg.kind != args.command:
        # a config written for another experiment is still usable; the subcommand decides
        log.info("config kind %r overridden by subcommand %r", cfg.kind, args.command)
    cfg.kind = args.command
    if args.workers is not None:
        cfg.workers = args.workers
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    return validate(cfg)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        if args.mutation is not None and args.command != "check":
            raise ConfigError("--mutation is only valid with the check subcommand")
        if args.command == "check":
            report = run_check(cfg, mutation=args.mutation)
            for s in report.suites:
                print(f"{'PASS' if s.passed else 'FAIL'} {s.name}")
            if cfg.out:
                atomic_write(cfg.out, summary_json(report.to_dict()))
            else:
                print(summary_json(report.to_dict()), end="")
            return EXIT_OK if report.passed else EXIT_SUITE
        runner = {"effective": run_effective, "microscopic": run_microscopic,
                  "sweep": run_sweep}[args.command]
        result = runner(cfg)
        if cfg.out:
            csv_path, json_path = write_result(result, cfg.out)
            print(f"wrote {csv_path} and {json_path}")
        else:
            print(summary_json(result.summary), end="")
        if args.command in ("microscopic", "sweep") and not result.summary["gronwall_all_valid"]:
            print("envelope fit invalid for at least one run", file=sys.stderr)
            return EXIT_SUITE
        return EXIT_OK
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, (ConfigError, TruncationError)):
            return EXIT_USAGE
        return EXIT_NUMERIC
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, TruncationError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
