"""Command line front end.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .assembly import SolverError
from .experiments import (
    ConfigError,
    conditioning_rows,
    convergence_rows,
    parse_config,
    scenario_from_config,
    solve_rows,
    stability_rows,
    to_csv,
)
from .geometry import GeometryError
from .stabilization import StabilizationError
from .trimming import TrimmingError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

RUNNERS = {
    "solve": solve_rows,
    "stability": stability_rows,
    "convergence": convergence_rows,
    "conditioning": conditioning_rows,
}

NUMERIC_ERRORS = (SolverError, StabilizationError, TrimmingError, GeometryError, np.linalg.LinAlgError,
                  FloatingPointError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trimiga", description="Trimmed isogeometric Poisson experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name, help=f"run the {name} experiment and write CSV")
        p.add_argument("--config", required=True, help="key = value experiment file")
        p.add_argument("--out", help="CSV destination (default: config 'out' key, else stdout)")
        p.add_argument("--quiet", action="store_true", help="suppress progress messages")
    p = sub.add_parser("verify", help="run the built-in invariant checks")
    p.add_argument("--config", help="ignored; accepted for symmetry")
    p.add_argument("--out", help="write the check report here")
    p.add_argument("--quiet", action="store_true")
    return parser


def _log(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr)


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _verify(args) -> int:
    from .verify import run_checks

    results = run_checks()
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {detail}" for name, ok, detail in results]
    report = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(report)
    if not args.quiet or args.out is None:
        sys.stdout.write(report)
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERIC


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "verify":
        return _verify(args)
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text)
        exp = cfg.get("experiment")
        if exp is not None and exp != args.command:
            raise ConfigError(f"config is for {exp!r}, not {args.command!r}")
        sc = scenario_from_config(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _log(args, f"{args.command}: scenario {sc.name}, p={sc.degree}, levels {list(sc.levels)}")
    try:
        rows = RUNNERS[args.command](sc)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _write(to_csv(args.command, rows), args.out or cfg.get("out"))
    _log(args, f"{len(rows)} rows written")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
