"""Command-line front-end: `ncergodic verify | suite | export-csv`."""

from __future__ import annotations

import argparse
import asyncio
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from .errors import InvalidInputError, NcErgodicError, NumericalBreakdownError
from .models import RunOverrides, SolverOptions, Tolerances, UniformOptions
from .runner import DEFAULT_MAX_UNSTABLE_RATE, ScenarioRunner, SuiteConfig, run_suite
from .schema import (
    EXIT_CERTIFICATE_FAILURE,
    EXIT_INVALID_INPUT,
    EXIT_NUMERICAL_BREAKDOWN,
    EXIT_OK,
    csv_rows,
    dump_report,
    load_any_report,
    write_csv,
)

logger = logging.getLogger(__name__)


def _dims(text: str) -> list[int]:
    try:
        dims = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid block sizes {text!r}") from exc
    if not dims or any(n < 1 for n in dims):
        raise argparse.ArgumentTypeError(f"block sizes must be positive integers: {text!r}")
    return dims


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ncergodic",
        description="Certify maximal ergodic projections for positive maps on finite-dimensional algebras.",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="log progress to stderr (-v info, -vv debug)",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    verify = commands.add_parser("verify", help="run a scenario file and write its report")
    verify.add_argument("scenario", type=Path)
    verify.add_argument("--strict", action="store_true", default=None, help="raise on ambiguous numerics")
    verify.add_argument("--tol", type=float, help="relative residual tolerance")
    verify.add_argument("--out", type=Path, help="report path (stdout when omitted)")
    verify.add_argument("--n-max", type=int, help="largest pointwise n")
    verify.add_argument("--horizon", type=int, help="number of projections for the uniform limit")
    verify.add_argument("--check-horizon", type=int, help="largest r checked by the uniform bound")

    suite = commands.add_parser("suite", help="run a seeded random suite")
    suite.add_argument("--seed", type=int, required=True)
    suite.add_argument("--count", type=int, required=True)
    suite.add_argument("--dims", type=_dims, default=[2, 3], help="block sizes, e.g. 2,3")
    suite.add_argument("--strict", action="store_true", help="raise on ambiguous numerics")
    suite.add_argument("--tol", type=float, help="relative residual tolerance")
    suite.add_argument("--out", type=Path, help="summary path (stdout when omitted)")
    suite.add_argument("--n-max", type=int, default=12)
    suite.add_argument("--horizon", type=int, default=20)
    suite.add_argument("--check-horizon", type=int)
    suite.add_argument("--workers", type=int, help="concurrent instances (default: CPU count)")
    suite.add_argument(
        "--max-unstable-rate",
        type=float,
        default=DEFAULT_MAX_UNSTABLE_RATE,
        help="accepted fraction of instances without a stable limit",
    )

    export = commands.add_parser("export-csv", help="export certificate rows of a report")
    export.add_argument("report", type=Path)
    export.add_argument("--out", type=Path, help="CSV path (next to the report when omitted)")
    return parser


def _configure_logging(verbosity: int) -> None:
    if verbosity <= 0:
        level = logging.WARNING
    elif verbosity == 1:
        level = logging.INFO
    else:
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text + "\n")
    else:
        out.write_text(text + "\n", encoding="utf-8")
        logger.info("wrote %s", out)


def _verify(args: argparse.Namespace) -> int:
    overrides = RunOverrides()
    if args.tol is not None:
        overrides.tol = args.tol
    if args.strict:
        overrides.strict = True
    if args.n_max is not None:
        overrides.n_max = args.n_max
    if args.horizon is not None:
        overrides.horizon = args.horizon
    if args.check_horizon is not None:
        overrides.check_horizon = args.check_horizon
    runner = ScenarioRunner.from_path(args.scenario, overrides=overrides)
    report = asyncio.run(runner.run())
    _emit(dump_report(report), args.out)
    if not report.passed:
        logger.warning("scenario %s failed certification", report.name)
        return EXIT_CERTIFICATE_FAILURE
    return EXIT_OK


def _suite(args: argparse.Namespace) -> int:
    tolerances = Tolerances(strict=args.strict)
    if args.tol is not None:
        tolerances.residual = args.tol
    config = SuiteConfig(
        n_max=args.n_max,
        horizon=args.horizon,
        check_horizon=args.check_horizon,
        solver=SolverOptions(strict=args.strict),
        uniform=UniformOptions(),
        tolerances=tolerances,
        max_unstable_rate=args.max_unstable_rate,
    )
    summary = asyncio.run(
        run_suite(args.seed, args.count, args.dims, config, workers=args.workers)
    )
    _emit(dump_report(summary), args.out)
    logger.info(
        "suite: %d/%d passed, %d unstable", summary.passed_count, summary.count, summary.unstable_count
    )
    return EXIT_OK if summary.passed else EXIT_CERTIFICATE_FAILURE


def _export_csv(args: argparse.Namespace) -> int:
    report = load_any_report(args.report)
    out = args.out if args.out is not None else args.report.with_suffix(".csv")
    count = write_csv(csv_rows(report), out)
    logger.info("wrote %d row(s) to %s", count, out)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point of the `ncergodic` console script; returns the exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    handlers = {"verify": _verify, "suite": _suite, "export-csv": _export_csv}
    try:
        return handlers[args.command](args)
    except InvalidInputError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except NumericalBreakdownError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL_BREAKDOWN
    except NcErgodicError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
