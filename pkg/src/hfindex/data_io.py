"""CSV ingestion, eligibility screening, ledger snapshots and synthetic universes.

File formats (one record per row, header required):

``universe.csv``
    fund_id, strategy, month, aum_usd, nav_return, redemption_freq_m, notice_m,
    min_invest_bp, closed, dd_passed, exposure_cap_usd (blank = unbounded);
    optional: accepting, settle_lag_m, non_index_exposure_usd, grid_anchor
``nav.csv``
    fund_id, month, as_of_date, return_estimate, finalized; optional: admin_override
``flows.csv``
    effective_month, vintage_month (blank = actual), notional_usd
``limits.csv``
    strategy, limit
``executions.csv``
    effective_month, fund_id, executed_usd (signed; negative = redemption proceeds)

Loaders reject bad rows with the file and line number rather than repairing them.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import (
    DEFAULT_STRATEGIES,
    Cents,
    FundMonthRecord,
    FundRecord,
    FundTerms,
    MonthId,
    NotionalSchedule,
    usd,
)
from .errors import (
    InvalidCalendarError,
    ParseError,
    SchemaError,
    SnapshotIntegrityError,
    SnapshotVersionError,
)
from .strategy import UniverseSnapshot

log = logging.getLogger(__name__)

UNIVERSE_COLUMNS = (
    "fund_id", "strategy", "month", "aum_usd", "nav_return", "redemption_freq_m",
    "notice_m", "min_invest_bp", "closed", "dd_passed", "exposure_cap_usd",
)
UNIVERSE_OPTIONAL = ("accepting", "settle_lag_m", "non_index_exposure_usd", "grid_anchor")
NAV_COLUMNS = ("fund_id", "month", "as_of_date", "return_estimate", "finalized")
FLOW_COLUMNS = ("effective_month", "vintage_month", "notional_usd")
LIMIT_COLUMNS = ("strategy", "limit")
EXECUTION_COLUMNS = ("effective_month", "fund_id", "executed_usd")

SNAPSHOT_VERSION = 1

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n", ""}


@dataclass(frozen=True)
class EligibilityPolicy:
    min_aum_usd: Cents = usd(50_000_000)
    require_due_diligence: bool = True
    max_notice_months: Optional[int] = 3
    max_redemption_frequency_months: Optional[int] = 3

    def __post_init__(self):
        for v in (self.min_aum_usd, self.max_notice_months, self.max_redemption_frequency_months):
            if v is not None and v < 0:
                raise ValueError("eligibility thresholds must be non-negative")


def eligibility_screen(fund: FundRecord, month: MonthId, policy: EligibilityPolicy) -> bool:
    if fund.aum(month) < policy.min_aum_usd or month not in fund.aum_series:
        return False
    if policy.require_due_diligence and not fund.due_diligence_passed:
        return False
    t = fund.terms
    if policy.max_notice_months is not None and t.notice_period_months > policy.max_notice_months:
        return False
    if (
        policy.max_redemption_frequency_months is not None
        and t.redemption_frequency_months > policy.max_redemption_frequency_months
    ):
        return False
    return True


# -- low-level field parsing ---------------------------------------------------


class _Rows:
    """DictReader wrapper that tags errors with path and line."""

    def __init__(self, path, required: Sequence[str]):
        self.path = str(path)
        self.required = required

    def __iter__(self):
        p = Path(self.path)
        if not p.exists():
            raise FileNotFoundError(self.path)
        with p.open(newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in self.required if c not in header]
            if missing:
                raise SchemaError(f"missing columns: {', '.join(missing)}", self.path, 1)
            for row in reader:
                yield reader.line_num, {k: (v or "").strip() for k, v in row.items() if k is not None}

    def fail(self, line: int, message: str, schema: bool = False):
        cls = SchemaError if schema else ParseError
        raise cls(message, self.path, line)


def _month(rows: _Rows, line: int, text: str) -> MonthId:
    try:
        return MonthId.parse(text)
    except InvalidCalendarError:
        rows.fail(line, f"bad month {text!r}")


def _decimal(rows: _Rows, line: int, name: str, text: str) -> Decimal:
    try:
        d = Decimal(text)
    except InvalidOperation:
        rows.fail(line, f"{name}: not a number: {text!r}")
    if not d.is_finite():
        rows.fail(line, f"{name}: not finite")
    return d


def _cents(rows, line, name, text, allow_blank=False) -> Optional[Cents]:
    if text == "" and allow_blank:
        return None
    d = _decimal(rows, line, name, text)
    if d < 0:
        rows.fail(line, f"{name} must be non-negative, got {text}")
    return usd(d)


def _float(rows, line, name, text) -> float:
    return float(_decimal(rows, line, name, text))


def _int(rows, line, name, text, default=None) -> int:
    if text == "" and default is not None:
        return default
    try:
        v = int(text)
    except ValueError:
        rows.fail(line, f"{name}: not an integer: {text!r}")
    if v < 0:
        rows.fail(line, f"{name} must be non-negative")
    return v


def _bool(rows, line, name, text, default=None) -> bool:
    t = text.lower()
    if t == "" and default is not None:
        return default
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    rows.fail(line, f"{name}: not a boolean: {text!r}")


def _fmt_cents(c: Cents) -> str:
    sign = "-" if c < 0 else ""
    c = abs(c)
    return f"{sign}{c // 100}.{c % 100:02d}"


def _fmt_bp(weight: float) -> str:
    d = (Decimal(repr(weight)) * 10000).normalize()
    return format(d, "f")


def _bp_to_weight(d: Decimal) -> float:
    return float(d / 10000)


# -- universe ------------------------------------------------------------------


def load_universe(path, strategies: Optional[Iterable[str]] = None):
    """Parse a universe file into fund records and per-month universe snapshots."""
    rows = _Rows(path, UNIVERSE_COLUMNS)
    known = set(strategies) if strategies is not None else None
    static: dict = {}
    aum: dict = {}
    navs: dict = {}
    for line, r in rows:
        fid = r["fund_id"]
        if not fid:
            rows.fail(line, "empty fund_id")
        strat = r["strategy"]
        if known is not None and strat not in known:
            rows.fail(line, f"unknown strategy {strat!r}", schema=True)
        m = _month(rows, line, r["month"])
        a = _cents(rows, line, "aum_usd", r["aum_usd"])
        nav = _float(rows, line, "nav_return", r["nav_return"]) if r["nav_return"] != "" else None
        min_bp = _decimal(rows, line, "min_invest_bp", r["min_invest_bp"] or "0")
        if min_bp < 0:
            rows.fail(line, "min_invest_bp must be non-negative")
        terms = FundTerms(
            redemption_frequency_months=max(1, _int(rows, line, "redemption_freq_m", r["redemption_freq_m"], 1)),
            notice_period_months=_int(rows, line, "notice_m", r["notice_m"], 0),
            min_investment_weight=_bp_to_weight(min_bp),
            closed_to_new_investment=_bool(rows, line, "closed", r["closed"], False),
            exposure_cap_usd=_cents(rows, line, "exposure_cap_usd", r["exposure_cap_usd"], allow_blank=True),
            accepting_allocations=_bool(rows, line, "accepting", r.get("accepting", ""), True),
            settlement_lag_months=_int(rows, line, "settle_lag_m", r.get("settle_lag_m", ""), 0),
            grid_anchor=_int(rows, line, "grid_anchor", r.get("grid_anchor", ""), 0),
        )
        dd = _bool(rows, line, "dd_passed", r["dd_passed"], True)
        non_index = _cents(rows, line, "non_index_exposure_usd", r.get("non_index_exposure_usd", ""), allow_blank=True) or 0
        key = (strat, terms, dd, non_index)
        if fid in static and static[fid] != key:
            field_name = "strategy" if static[fid][0] != strat else "fund terms"
            rows.fail(line, f"{fid}: {field_name} differs from earlier rows", schema=True)
        static[fid] = key
        if (fid, m) in aum:
            rows.fail(line, f"duplicate row for {fid} {m}")
        aum[fid, m] = a
        if nav is not None:
            navs[fid, m] = nav

    aum_by: dict = {f: {} for f in static}
    nav_by: dict = {f: {} for f in static}
    for (f, m), a in sorted(aum.items()):
        aum_by[f][m] = a
    for (f, m), v in sorted(navs.items()):
        nav_by[f][m] = v
    funds = []
    for fid in sorted(static):
        strat, terms, dd, non_index = static[fid]
        funds.append(
            FundRecord(
                fund=fid,
                strategy=strat,
                terms=terms,
                aum_series=aum_by[fid],
                nav_returns=nav_by[fid],
                due_diligence_passed=dd,
                non_index_exposure_usd=non_index,
            )
        )
    if not funds:
        log.warning("universe file %s contains no funds", path)
    return funds, universe_snapshots(funds)


def universe_snapshots(funds: Sequence[FundRecord]) -> list:
    by_month: dict = {}
    for f in funds:
        for m, a in f.aum_series.items():
            snap = by_month.setdefault(m, ({}, {}))
            snap[0][f.strategy] = snap[0].get(f.strategy, 0) + a
            snap[1][f.fund] = a
    strategies = sorted({f.strategy for f in funds})
    out = []
    for m in sorted(by_month):
        strat_aum, fund_aum = by_month[m]
        out.append(UniverseSnapshot(m, {s: strat_aum.get(s, 0) for s in strategies}, fund_aum))
    return out


def save_universe(funds: Sequence[FundRecord], path) -> None:
    cols = UNIVERSE_COLUMNS + UNIVERSE_OPTIONAL
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for f in sorted(funds, key=lambda f: f.fund):
            t = f.terms
            for m in sorted(f.aum_series):
                nav = f.nav_returns.get(m)
                w.writerow([
                    f.fund, f.strategy, str(m), _fmt_cents(f.aum_series[m]),
                    "" if nav is None else repr(nav),
                    t.redemption_frequency_months, t.notice_period_months,
                    _fmt_bp(t.min_investment_weight),
                    int(t.closed_to_new_investment), int(f.due_diligence_passed),
                    "" if t.exposure_cap_usd is None else _fmt_cents(t.exposure_cap_usd),
                    int(t.accepting_allocations), t.settlement_lag_months,
                    _fmt_cents(f.non_index_exposure_usd), t.grid_anchor,
                ])


# -- NAV reports ---------------------------------------------------------------


@dataclass(frozen=True)
class NavReport:
    as_of: date
    record: FundMonthRecord


@dataclass(frozen=True)
class NavReports:
    revisions: list
    rejected: list = field(default_factory=list)  # (line, message)


def load_nav_reports(path) -> NavReports:
    """Read NAV estimates in as-of order; rows after a finalized NAV are skipped and reported."""
    rows = _Rows(path, NAV_COLUMNS)
    parsed = []
    for line, r in rows:
        try:
            as_of = date.fromisoformat(r["as_of_date"])
        except ValueError:
            rows.fail(line, f"bad as_of_date {r['as_of_date']!r}")
        override = r.get("admin_override", "")
        rec = FundMonthRecord(
            fund=r["fund_id"],
            month=_month(rows, line, r["month"]),
            nav_return_estimate=_float(rows, line, "return_estimate", r["return_estimate"]),
            nav_finalized=_bool(rows, line, "finalized", r["finalized"], False),
            admin_override=_float(rows, line, "admin_override", override) if override else None,
        )
        parsed.append((as_of, line, rec))
    parsed.sort(key=lambda t: (t[0], t[1]))
    done: set = set()
    keep, rejected = [], []
    for as_of, line, rec in parsed:
        key = (rec.fund, rec.month)
        if key in done:
            rejected.append((line, f"{rec.fund} {rec.month}: NAV already finalized"))
            continue
        if rec.nav_finalized:
            done.add(key)
        keep.append(NavReport(as_of, rec))
    return NavReports(keep, rejected)


def save_nav_reports(reports: Iterable[NavReport], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NAV_COLUMNS + ("admin_override",))
        for rep in reports:
            r = rep.record
            w.writerow([
                r.fund, str(r.month), rep.as_of.isoformat(), repr(r.nav_return_estimate),
                int(r.nav_finalized), "" if r.admin_override is None else repr(r.admin_override),
            ])


# -- flows, limits, executions -------------------------------------------------


def load_flow_schedule(path) -> NotionalSchedule:
    """Actual notionals (blank vintage) and vintage-stamped estimates.

    The file carries one notional per month; it serves as both the begin and
    end notional of that month, so client flows happen at month boundaries.
    """
    rows = _Rows(path, FLOW_COLUMNS)
    actual: dict = {}
    est: dict = {}
    for line, r in rows:
        eff = _month(rows, line, r["effective_month"])
        amount = _cents(rows, line, "notional_usd", r["notional_usd"])
        if r["vintage_month"] == "":
            if eff in actual:
                rows.fail(line, f"duplicate actual notional for {eff}")
            actual[eff] = amount
        else:
            vin = _month(rows, line, r["vintage_month"])
            if vin > eff:
                rows.fail(line, f"estimate vintage {vin} after effective month {eff}", schema=True)
            est[eff, vin] = amount
    return NotionalSchedule(dict(sorted(actual.items())), dict(sorted(actual.items())), dict(sorted(est.items())))


def save_flow_schedule(schedule: NotionalSchedule, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FLOW_COLUMNS)
        for m in sorted(schedule.actual_begin):
            w.writerow([str(m), "", _fmt_cents(schedule.actual_begin[m])])
        for (eff, vin) in sorted(schedule.estimates):
            w.writerow([str(eff), str(vin), _fmt_cents(schedule.estimates[eff, vin])])


def load_limits(path) -> dict:
    rows = _Rows(path, LIMIT_COLUMNS)
    out = {}
    for line, r in rows:
        v = _float(rows, line, "limit", r["limit"])
        if not 0 <= v <= 1:
            rows.fail(line, f"limit {v} outside [0, 1]", schema=True)
        out[r["strategy"]] = v
    return out


def save_limits(limits: Mapping[str, float], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LIMIT_COLUMNS)
        for s in sorted(limits):
            w.writerow([s, repr(limits[s])])


def load_executions(path) -> dict:
    """Executed dollar amounts keyed by ``(effective_month, fund_id)``, in cents."""
    rows = _Rows(path, EXECUTION_COLUMNS)
    out = {}
    for line, r in rows:
        m = _month(rows, line, r["effective_month"])
        out[m, r["fund_id"]] = usd(_decimal(rows, line, "executed_usd", r["executed_usd"]))
    return out


# -- snapshots -----------------------------------------------------------------


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def snapshot_ledger(state, path) -> None:
    """Write an engine state as canonical JSON with a checksum."""
    from .projection import state_to_dict

    payload = state_to_dict(state)
    body = _canonical(payload)
    digest = hashlib.sha256(body.encode()).hexdigest()
    text = _canonical({"version": SNAPSHOT_VERSION, "sha256": digest, "state": payload})
    Path(path).write_text(text + "\n")


def restore_ledger(path):
    from .projection import state_from_dict

    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SnapshotIntegrityError(f"{path}: unreadable snapshot ({exc.msg})") from None
    if not isinstance(doc, dict) or "state" not in doc or "sha256" not in doc:
        raise SnapshotIntegrityError(f"{path}: not a ledger snapshot")
    if doc.get("version") != SNAPSHOT_VERSION:
        raise SnapshotVersionError(f"{path}: snapshot version {doc.get('version')!r}, expected {SNAPSHOT_VERSION}")
    if hashlib.sha256(_canonical(doc["state"]).encode()).hexdigest() != doc["sha256"]:
        raise SnapshotIntegrityError(f"{path}: checksum mismatch")
    return state_from_dict(doc["state"])


# -- synthetic universes -------------------------------------------------------

DEFAULT_PROFILE = dict(zip(DEFAULT_STRATEGIES, (0.22, 0.15, 0.13, 0.12, 0.10, 0.09, 0.08, 0.06, 0.05)))


@dataclass(frozen=True)
class SyntheticUniverse:
    universe: Path
    nav: Path
    flows: Path
    limits: Path
    start: MonthId  # first month meant to be run (after the warm-up history)
    end: MonthId


def generate_synthetic_universe(
    seed: int,
    fund_count: int,
    months: int,
    strategy_profile: Optional[Mapping[str, float]] = None,
    out_dir=".",
    *,
    start: MonthId = MonthId(2016, 1),
    history_months: int = 12,
    steady: bool = False,
    drift_strategy: Optional[str] = None,
    drift_return: float = 0.04,
    notional_usd: float = 500_000_000,
    limit: Optional[float] = None,
    revision_rate: float = 0.1,
) -> SyntheticUniverse:
    """Write a seeded pseudo-random universe (universe, nav, flows, limits files).

    ``steady`` gives every fund the same constant return, constant AUM, monthly
    liquidity and a flat notional. ``drift_strategy`` makes one strategy's funds
    outperform by ``drift_return`` a month while its universe AUM stays flat,
    so the index drifts overweight in it.
    """
    if fund_count <= 0 or months <= 0:
        raise ValueError("fund_count and months must be positive")
    rng = np.random.default_rng(seed)
    profile = dict(strategy_profile or DEFAULT_PROFILE)
    labels = sorted(profile)
    probs = np.array([profile[s] for s in labels], dtype=float)
    probs = probs / probs.sum()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    total = history_months + months
    first = start - history_months
    all_months = [first + k for k in range(total)]
    fund_ids = [f"F{i:04d}" for i in range(1, fund_count + 1)]

    strat_idx = rng.choice(len(labels), size=fund_count, p=probs)
    base_aum = np.exp(rng.normal(np.log(4e8), 0.9, size=fund_count)).clip(2e7, 2e10)
    freq = rng.choice([1, 1, 1, 1, 3, 3, 6], size=fund_count)
    notice = rng.choice([0, 1, 1, 2, 3], size=fund_count)
    min_bp = rng.choice([0, 0, 0, 5, 10], size=fund_count)
    closed = rng.random(fund_count) < 0.05
    dd = rng.random(fund_count) < 0.95
    has_cap = rng.random(fund_count) < 0.2
    cap_usd = rng.uniform(3e6, 2e7, size=fund_count)
    non_index = rng.uniform(0, 2e6, size=fund_count)
    lag = (rng.random(fund_count) < 0.2).astype(int)
    strat_ret = rng.normal(0.005, 0.02, size=(total, len(labels)))
    idio = rng.normal(0.0, 0.015, size=(total, fund_count))
    aum_noise = rng.normal(0.0, 0.01, size=(total, fund_count))
    rev_pick = rng.random((total, fund_count)) < revision_rate
    rev_noise = rng.normal(0.0, 0.004, size=(total, fund_count))
    flows = rng.normal(0.004, 0.02, size=total)

    if steady:
        freq[:] = 1
        notice[:] = 0
        closed[:] = False
        dd[:] = True
        has_cap[:] = False
        lag[:] = 0
    drift_code = labels.index(drift_strategy) if drift_strategy in labels else None

    fund_rows = []
    nav_rows = []
    aum = base_aum.copy()
    for t, m in enumerate(all_months):
        if steady:
            rets = np.full(fund_count, 0.005)
        else:
            rets = strat_ret[t, strat_idx] + idio[t]
            if drift_code is not None:
                rets = np.where(strat_idx == drift_code, rets + drift_return, rets)
            grow = (1 + rets) * (1 + aum_noise[t])
            if drift_code is not None:
                grow = np.where(strat_idx == drift_code, 1.0, grow)
            aum = (aum * grow).clip(1e6, None)
        for i, fid in enumerate(fund_ids):
            final = round(float(rets[i]), 10)
            first_est = final
            if not steady and rev_pick[t, i]:
                first_est = round(final + float(rev_noise[t, i]), 10)
                end = m.last_day()
                nav_rows.append(NavReport(end + timedelta(days=20), FundMonthRecord(fid, m, final)))
                nav_rows.append(NavReport(end + timedelta(days=40), FundMonthRecord(fid, m, final, True)))
            fund_rows.append((fid, m, int(round(aum[i] * 100)), first_est))

    by_fund: dict = {fid: ({}, {}) for fid in fund_ids}
    for fid, m, a, nav in fund_rows:
        by_fund[fid][0][m] = a
        by_fund[fid][1][m] = nav
    records = [
        FundRecord(
            fund=fid,
            strategy=labels[strat_idx[i]],
            terms=FundTerms(
                redemption_frequency_months=int(freq[i]),
                notice_period_months=int(notice[i]),
                min_investment_weight=float(min_bp[i]) / 10000,
                closed_to_new_investment=bool(closed[i]),
                exposure_cap_usd=usd(round(float(cap_usd[i]))) if has_cap[i] else None,
                settlement_lag_months=int(lag[i]),
            ),
            aum_series=by_fund[fid][0],
            nav_returns=by_fund[fid][1],
            due_diligence_passed=bool(dd[i]),
            non_index_exposure_usd=usd(round(float(non_index[i]))) if has_cap[i] else 0,
        )
        for i, fid in enumerate(fund_ids)
    ]

    eta = float(notional_usd)
    actual, est = {}, {}
    for t, m in enumerate(all_months):
        if t > 0 and not steady:
            eta *= 1 + float(flows[t])
        actual[m] = usd(round(eta, 2))
        if t > 0:
            est[m, m - 1] = actual[m]
    schedule = NotionalSchedule(actual, actual, est)

    lim = limit if limit is not None else (1.0 if steady else 0.30)
    paths = SyntheticUniverse(
        universe=out / "universe.csv",
        nav=out / "nav.csv",
        flows=out / "flows.csv",
        limits=out / "limits.csv",
        start=start,
        end=start + (months - 1),
    )
    save_universe(records, paths.universe)
    save_nav_reports(sorted(nav_rows, key=lambda r: (r.as_of, r.record.fund, r.record.month)), paths.nav)
    save_flow_schedule(schedule, paths.flows)
    save_limits({s: lim for s in labels}, paths.limits)
    return paths
