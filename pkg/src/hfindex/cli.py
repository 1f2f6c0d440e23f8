"""Command-line entry point: ``hfindex {run,finalize,project,report,simulate}``.

Exit codes: 0 success, 1 input error (bad files, bad arguments),
2 invariant violation detected during a run.
"""

from __future__ import annotations

import argparse
import logging
import sys
from datetime import date
from pathlib import Path

from .backtest import REPORT_QUERIES, RunConfig, apply_revisions, render_report, run_from_config, write_outputs
from .core import MonthId
from .data_io import generate_synthetic_universe, load_nav_reports, restore_ledger, snapshot_ledger
from .errors import HFIndexError, InputError, InvariantViolation
from .projection import project_and_schedule

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Usage errors count as input errors (exit 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _month(text: str) -> MonthId:
    try:
        return MonthId.parse(text)
    except HFIndexError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hfindex", description=__doc__.splitlines()[0])
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a backtest and write reports")
    run.add_argument("--universe", required=True, type=Path)
    run.add_argument("--nav", type=Path, help="NAV revision file (optional)")
    run.add_argument("--flows", required=True, type=Path)
    run.add_argument("--limits", required=True, type=Path)
    run.add_argument("--executions", type=Path, help="executed amounts per fund (optional)")
    run.add_argument("--start", required=True, type=_month)
    run.add_argument("--end", required=True, type=_month)
    run.add_argument("--horizon", type=int, default=12)
    run.add_argument("--annual-fee", type=float, default=0.0095)
    run.add_argument("--seed", type=int, help="recorded for provenance; the run itself is deterministic")
    run.add_argument("--output-dir", required=True, type=Path)

    fin = sub.add_parser("finalize", help="apply NAV revisions to a saved state")
    fin.add_argument("--state", required=True, type=Path)
    fin.add_argument("--nav", required=True, type=Path)
    fin.add_argument("--as-of", required=True, type=date.fromisoformat, help="ISO date of the revision clock")
    fin.add_argument("--output", type=Path, help="where to write the new state (default: overwrite)")

    proj = sub.add_parser("project", help="re-project a saved state from a decision month")
    proj.add_argument("--state", required=True, type=Path)
    proj.add_argument("--as-of", required=True, type=_month)
    proj.add_argument("--horizon", type=int)
    proj.add_argument("--output", type=Path, help="write the updated state here")

    rep = sub.add_parser("report", help="print a report table from a saved state")
    rep.add_argument("--state", required=True, type=Path)
    rep.add_argument("--query", required=True, choices=REPORT_QUERIES)

    sim = sub.add_parser("simulate", help="write a seeded synthetic universe")
    sim.add_argument("--seed", type=int, default=42)
    sim.add_argument("--funds", type=int, default=500)
    sim.add_argument("--months", type=int, default=60)
    sim.add_argument("--output-dir", required=True, type=Path)
    sim.add_argument("--steady", action="store_true", help="flat returns, no flows")
    sim.add_argument("--drift-strategy", help="strategy whose funds outperform with flat AUM")
    sim.add_argument("--limit", type=float, help="weight limit for every strategy")
    return p


def _projection_table(state) -> str:
    lines = ["as_of,target,fund_id,projected,estimated,residual"]
    for rec in state.projections:
        for f in sorted(set(rec.estimated) | set(rec.projected)):
            lines.append(",".join([
                str(rec.as_of), str(rec.target), f, repr(rec.projected.get(f, 0.0)),
                repr(rec.estimated.get(f, 0.0)), repr(rec.residual.get(f, 0.0)),
            ]))
    return "\n".join(lines) + "\n"


def _dispatch(args) -> int:
    if args.command == "run":
        cfg = RunConfig(
            universe_path=args.universe, nav_path=args.nav, flow_path=args.flows,
            limits_path=args.limits, start=args.start, end=args.end, horizon=args.horizon,
            annual_fee=args.annual_fee, seed=args.seed, output_dir=args.output_dir,
            executions_path=args.executions,
        )
        state = run_from_config(cfg)
        for name in write_outputs(state, cfg.output_dir):
            logging.info("wrote %s", cfg.output_dir / name)
    elif args.command == "finalize":
        state = restore_ledger(args.state)
        reports = load_nav_reports(args.nav)
        for line, msg in reports.rejected:
            print(f"{args.nav}:{line}: skipped: {msg}", file=sys.stderr)
        state, _ = apply_revisions(state, reports.revisions, args.as_of)
        snapshot_ledger(state, args.output or args.state)
    elif args.command == "project":
        state = restore_ledger(args.state)
        if args.as_of not in state.ledgers:
            raise InputError(f"no ledger for {args.as_of} in {args.state}")
        state = project_and_schedule(state, args.as_of, args.horizon)
        sys.stdout.write(_projection_table(state))
        if args.output:
            snapshot_ledger(state, args.output)
    elif args.command == "report":
        state = restore_ledger(args.state)
        sys.stdout.write(render_report(state, args.query))
    elif args.command == "simulate":
        paths = generate_synthetic_universe(
            args.seed, args.funds, args.months, out_dir=args.output_dir, steady=args.steady,
            drift_strategy=args.drift_strategy, limit=args.limit,
        )
        print(f"start={paths.start} end={paths.end}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (InputError, FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
