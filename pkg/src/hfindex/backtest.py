"""Month-by-month backtest driver and tabular reports."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Mapping, Optional

from .core import FINALIZATION_DAYS, MonthId, month_range
from .data_io import (
    EligibilityPolicy,
    NavReport,
    load_executions,
    load_flow_schedule,
    load_limits,
    load_nav_reports,
    load_universe,
    snapshot_ledger,
)
from .errors import InputError
from .projection import (
    DEFAULT_HORIZON,
    Diagnostic,
    EngineState,
    apply_month_transition,
    initial_state,
    project_and_schedule,
)
from .returns import revise_and_finalize_month
from .strategy import CAP_MULTIPLIER

log = logging.getLogger(__name__)

REPORT_QUERIES = ("levels", "weights", "strategies", "gamma", "schedule", "diagnostics")


@dataclass(frozen=True)
class RunConfig:
    universe_path: Path
    nav_path: Optional[Path]
    flow_path: Path
    limits_path: Path
    start: MonthId
    end: MonthId
    horizon: int = DEFAULT_HORIZON
    annual_fee: float = 0.0095
    seed: Optional[int] = None
    output_dir: Path = Path("out")
    executions_path: Optional[Path] = None
    policy: EligibilityPolicy = field(default_factory=EligibilityPolicy)

    def __post_init__(self):
        if self.start > self.end:
            raise InputError(f"start {self.start} after end {self.end}")
        if self.annual_fee < 0:
            raise InputError("annual fee must be non-negative")
        if self.horizon < 1:
            raise InputError("horizon must be at least one month")


def _rechain(state: EngineState, start: MonthId) -> EngineState:
    """Carry a revised level forward through the later months."""
    ledgers = dict(state.ledgers)
    m = start + 1
    while m in ledgers:
        prev = ledgers[m - 1]
        cur = ledgers[m]
        if cur.level_begin != prev.level_end:
            ledgers[m] = replace(cur, level_begin=prev.level_end, level_end=prev.level_end * (1.0 + cur.index_return))
        m = m + 1
    return replace(state, ledgers=ledgers)


def apply_revisions(state: EngineState, reports, clock: date, finalization_days: int = FINALIZATION_DAYS):
    """Apply NAV reports dated up to ``clock`` and finalize months old enough.

    Returns the new state and the reports not yet due. Revisions reaching a
    finalized month are skipped and logged as diagnostics; weights already
    carried into later months are not rewritten, only the level chain is.
    """
    due = [r for r in reports if r.as_of <= clock]
    later = [r for r in reports if r.as_of > clock]
    by_month: dict = {}
    for r in due:
        by_month.setdefault(r.record.month, []).append(r.record)
    diags = []
    for month in sorted(by_month):
        ledger = state.ledgers.get(month)
        if ledger is None:
            continue
        days = (clock - month.last_day()).days
        if ledger.finalized:
            for rec in by_month[month]:
                diags.append(Diagnostic(None, month, "revision_rejected", fund=rec.fund, detail="month finalized"))
            continue
        recs = [rec for rec in by_month[month] if rec.fund in ledger.begin_weights]
        new = revise_and_finalize_month(ledger, recs, days, finalization_days)
        state = _rechain(replace(state, ledgers={**state.ledgers, month: new}), month)
    ledgers = dict(state.ledgers)
    for month, ledger in ledgers.items():
        if not ledger.finalized and (clock - month.last_day()).days >= finalization_days:
            ledgers[month] = replace(ledger, finalized=True)
    state = replace(state, ledgers=ledgers, diagnostics=state.diagnostics + tuple(diags))
    return state, later


def run_backtest(
    funds,
    limits: Mapping[str, float],
    notionals,
    start: MonthId,
    end: MonthId,
    *,
    nav_reports=(),
    executions: Optional[Mapping] = None,
    horizon: int = DEFAULT_HORIZON,
    annual_fee: float = 0.0095,
    policy: EligibilityPolicy = EligibilityPolicy(),
) -> EngineState:
    """Run the index from ``start`` through ``end`` inclusive."""
    state = initial_state(
        funds, limits, notionals, start, annual_fee=annual_fee, policy=policy, horizon=horizon
    )
    pending = sorted(nav_reports, key=lambda r: r.as_of)
    executions = executions or {}
    for m in month_range(start, end):
        state, pending = apply_revisions(state, pending, m.last_day())
        state = project_and_schedule(state, m)
        if m == end:
            break
        nxt = m + 1
        moved = {f: c for (em, f), c in executions.items() if em == nxt}
        state = apply_month_transition(state, m, moved)
    return state


def run_from_config(cfg: RunConfig) -> EngineState:
    funds, _ = load_universe(cfg.universe_path, strategies=None)
    limits = load_limits(cfg.limits_path)
    unknown = sorted({f.strategy for f in funds} - set(limits))
    if unknown:
        raise InputError(f"strategies without a weight limit: {', '.join(unknown)}")
    notionals = load_flow_schedule(cfg.flow_path)
    reports = load_nav_reports(cfg.nav_path).revisions if cfg.nav_path else []
    executions = load_executions(cfg.executions_path) if cfg.executions_path else None
    return run_backtest(
        funds, limits, notionals, cfg.start, cfg.end,
        nav_reports=reports, executions=executions, horizon=cfg.horizon,
        annual_fee=cfg.annual_fee, policy=cfg.policy,
    )


# -- reports -----------------------------------------------------------------------


def _f(x: float) -> str:
    return repr(float(x))


def report_rows(state: EngineState, query: str) -> tuple[list, list]:
    """Header and rows for one report view."""
    months = sorted(state.ledgers)
    if query == "levels":
        header = ["month", "level_begin", "index_return", "fee", "level_end", "finalized"]
        rows = [
            [str(m), _f(l.level_begin), _f(l.index_return), _f(l.fee), _f(l.level_end), int(l.finalized)]
            for m in months
            for l in [state.ledgers[m]]
        ]
    elif query == "gamma":
        header = ["month", "gamma", "flow_gap_usd", "clamped_mass"]
        rows = [
            [str(m), _f(l.normalization_factor), f"{l.flow_gap / 100:.2f}", _f(l.clamped_mass)]
            for m in months
            for l in [state.ledgers[m]]
        ]
    elif query == "weights":
        header = ["month", "fund_id", "strategy", "begin_weight", "begin_residual", "fund_return", "end_weight"]
        rows = []
        for m in months:
            l = state.ledgers[m]
            for f in sorted(l.begin_weights):
                rows.append([
                    str(m), f, state.funds[f].strategy if f in state.funds else "",
                    _f(l.begin_weights[f]), _f(l.begin_residuals.get(f, 0.0)),
                    _f(l.fund_returns.get(f, 0.0)), _f(l.end_weights.get(f, 0.0)),
                ])
    elif query == "strategies":
        header = ["month", "strategy", "sw", "tsw", "tswl", "aw_12m_ma", "target_count", "fund_count", "cap_breach"]
        rows = []
        for m in months:
            l = state.ledgers[m]
            counts: dict = {}
            for f, w in l.begin_weights.items():
                if w - l.begin_residuals.get(f, 0.0) > 0 and f in state.funds:
                    s = state.funds[f].strategy
                    counts[s] = counts.get(s, 0) + 1
            for s, t in sorted(state.targets.get(m, {}).items()):
                breach = t.sw > 0 and t.sw >= CAP_MULTIPLIER * t.tsw
                rows.append([
                    str(m), s, _f(t.sw), _f(t.tsw), _f(t.tswl), _f(t.aw_12m_ma),
                    t.target_fund_count, counts.get(s, 0), int(breach),
                ])
    elif query == "schedule":
        header = ["decided_in", "effective", "fund_id", "weight", "notional_usd", "amount_usd", "reason"]
        rows = [
            [str(e.decided_in), str(e.effective), e.fund, _f(e.weight),
             f"{e.notional_estimate / 100:.2f}", f"{e.amount / 100:.2f}", e.reason.value]
            for e in sorted(state.schedule, key=lambda e: (e.effective, e.fund, e.decided_in, e.reason.value))
        ]
    elif query == "diagnostics":
        header = ["as_of", "target", "kind", "strategy", "fund_id", "amount", "detail"]
        rows = [
            ["" if d.as_of is None else str(d.as_of), str(d.target), d.kind, d.strategy, d.fund, _f(d.amount), d.detail]
            for d in state.diagnostics
        ]
    else:
        raise ValueError(f"unknown report {query!r}; choose from {', '.join(REPORT_QUERIES)}")
    return header, rows


def render_report(state: EngineState, query: str) -> str:
    header, rows = report_rows(state, query)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


OUTPUT_FILES = {
    "ledger.csv": "levels",
    "gamma.csv": "gamma",
    "weights.csv": "weights",
    "strategies.csv": "strategies",
    "schedule.csv": "schedule",
    "diagnostics.csv": "diagnostics",
}


def write_outputs(state: EngineState, out_dir) -> list:
    """Render every report first, then write them all plus the state snapshot."""
    out = Path(out_dir)
    rendered = {name: render_report(state, q) for name, q in OUTPUT_FILES.items()}
    out.mkdir(parents=True, exist_ok=True)
    for name, text in rendered.items():
        (out / name).write_text(text)
    snapshot_ledger(state, out / "state.json")
    return sorted(rendered) + ["state.json"]
