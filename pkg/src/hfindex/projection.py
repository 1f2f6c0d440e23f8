"""Multi-month projection bootstrap and month transitions.

At each decision month ``n`` the index is projected forward month by month:
projected weights from the last estimated weights, the aggregate
reallocation weight, then rule-driven redemptions and allocations. Every fund
delta becomes an :class:`AdjustmentEntry`. A redemption can only be placed in
a month where the fund's liquidity terms allow it; needs that cannot be
placed roll forward and are logged as diagnostics.

Entries are regenerated on every run except those already effective and
those whose notice window has closed (locked).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Mapping, Optional

import numpy as np

from .allocation import (
    ALLOCATION_CEILING,
    GLOBAL_FUND_CAP,
    FundBounds,
    allocate_within_strategy,
    distribute_allocation_across_strategies,
    distribute_redemption_across_strategies,
    effective_fund_bounds,
    redeem_within_strategy,
    select_new_funds,
    spill_across_strategies,
)
from .core import (
    DEFAULT_BASE_LEVEL,
    AdjustmentEntry,
    FeeSchedule,
    FundRecord,
    FundTerms,
    MonthId,
    MonthLedger,
    NotionalSchedule,
    ProjectionRecord,
    Reason,
    StrategyTargets,
    monthly_fee,
)
from .data_io import EligibilityPolicy, eligibility_screen, universe_snapshots
from .errors import InvariantViolation
from .returns import compute_month
from .strategy import (
    CAP_MULTIPLIER,
    build_targets,
    initial_equal_weights,
    realized_strategy_weights,
    strategy_cap_breaches,
)
from .weights import flow_consistency_gap, normalize_weights, preliminary_weights

DEFAULT_HORIZON = 12
ARW_TOL = 1e-12
CAP_MARGIN = 1e-9
DIVERGENCE_THRESHOLD = 0.25


@dataclass(frozen=True)
class Diagnostic:
    as_of: Optional[MonthId]
    target: MonthId
    kind: str
    strategy: str = ""
    fund: str = ""
    amount: float = 0.0
    detail: str = ""


@dataclass(frozen=True)
class ResidualClaim:
    """Redemption proceeds not yet received; residual weight from ``first`` to ``last``."""

    fund: str
    amount: float  # cents
    first: MonthId
    last: MonthId


_DERIVED: dict = {}


def _derived(funds: Mapping[str, FundRecord]) -> tuple:
    """Universe snapshots and fund->strategy map, cached per funds mapping.

    States produced by ``replace`` share the same funds mapping, so this is
    computed once per run rather than once per month.
    """
    hit = _DERIVED.get(id(funds))
    if hit is None or hit[0] is not funds:
        if len(_DERIVED) > 8:
            _DERIVED.clear()
        snaps = universe_snapshots(list(funds.values()))
        hit = (funds, snaps, {f.fund: f.strategy for f in funds.values()})
        _DERIVED[id(funds)] = hit
    return hit[1], hit[2]


@dataclass(frozen=True)
class EngineState:
    funds: Mapping[str, FundRecord]
    limits: Mapping[str, float]
    notionals: NotionalSchedule
    ledgers: Mapping[MonthId, MonthLedger] = field(default_factory=dict)
    schedule: tuple = ()
    targets: Mapping[MonthId, Mapping[str, StrategyTargets]] = field(default_factory=dict)
    horizon: int = DEFAULT_HORIZON
    annual_fee: float = 0.0095
    policy: EligibilityPolicy = EligibilityPolicy()
    residuals: tuple = ()
    diagnostics: tuple = ()
    projections: tuple = ()

    @property
    def snapshots(self) -> list:
        return _derived(self.funds)[0]

    @property
    def membership(self) -> dict:
        return _derived(self.funds)[1]

    @property
    def strategies(self) -> list:
        return sorted(set(self.limits) | set(self.membership.values()))

    def history(self, as_of: MonthId) -> list:
        snaps = [s for s in self.snapshots if s.month <= as_of]
        return snaps or self.snapshots[:1]

    def targets_as_of(self, as_of: MonthId, sw: Optional[Mapping] = None) -> dict:
        limits = {s: self.limits.get(s, 1.0) for s in self.strategies}
        return build_targets(self.history(as_of), limits, sw)


# -- liquidity -------------------------------------------------------------------


def earliest_effective_month(terms: FundTerms, decision: MonthId) -> MonthId:
    """First month on the fund's redemption grid that respects the notice period.

    Adjustments take effect between months, so the answer is never before
    ``decision + 1``. The grid is every ``redemption_frequency_months``-th month
    counted from January of year 1 (shifted by ``grid_anchor``).
    """
    m = decision + max(1, terms.notice_period_months)
    freq = terms.redemption_frequency_months
    off = (m.epoch_index - terms.grid_anchor) % freq
    return m + (-off % freq)


def redemption_feasible(terms: FundTerms, decision: MonthId, target: MonthId) -> bool:
    if target < earliest_effective_month(terms, decision):
        return False
    return (target.epoch_index - terms.grid_anchor) % terms.redemption_frequency_months == 0


def _locked(entry: AdjustmentEntry, terms: FundTerms, as_of: MonthId) -> bool:
    if entry.effective <= as_of:
        return True
    if entry.weight < 0:
        return entry.effective < earliest_effective_month(terms, as_of)
    return False


# -- projection --------------------------------------------------------------------


class _Vintage:
    """Arrays describing the universe as seen from decision month ``as_of``."""

    def __init__(self, state: EngineState, as_of: MonthId):
        self.state = state
        self.as_of = as_of
        self.ids = sorted(state.funds)
        self.pos = {f: i for i, f in enumerate(self.ids)}
        self.strategies = state.strategies
        scode = {s: k for k, s in enumerate(self.strategies)}
        recs = [state.funds[f] for f in self.ids]
        self.recs = recs
        self.strat = np.array([scode[r.strategy] for r in recs], dtype=int)
        self.nstrat = len(self.strategies)
        self.eligible = np.array([eligibility_screen(r, as_of, state.policy) for r in recs], dtype=bool)
        self.aum = np.array([r.aum(as_of) for r in recs], dtype=float)
        t = [r.terms for r in recs]
        self.freq = np.array([x.redemption_frequency_months for x in t])
        self.anchor = np.array([x.grid_anchor for x in t])
        self.earliest = np.array([earliest_effective_month(x, as_of).ordinal for x in t])
        self.lag = np.array([x.settlement_lag_months for x in t])
        self.min_w = np.array([x.min_investment_weight for x in t])
        self.closed = np.array([x.closed_to_new_investment for x in t], dtype=bool)
        self.accepting = np.array([x.accepting_allocations for x in t], dtype=bool)
        self.cap_room = np.array(
            [math.inf if x.exposure_cap_usd is None else max(0, x.exposure_cap_usd - r.non_index_exposure_usd)
             for x, r in zip(t, recs)],
            dtype=float,
        )
        self.allocatable = self.eligible & ~self.closed & self.accepting
        targets = state.targets_as_of(as_of)
        self.targets = targets
        self.tsw = np.array([targets[s].tsw if s in targets else 0.0 for s in self.strategies])
        self.counts = np.array([targets[s].target_fund_count if s in targets else 0 for s in self.strategies])
        self.candidates = [
            {self.ids[i]: (s, self.aum[i]) for i in np.flatnonzero(self.allocatable & (self.strat == k))}
            for k, s in enumerate(self.strategies)
        ]

    def feasible(self, target: MonthId) -> np.ndarray:
        return (target.ordinal >= self.earliest) & ((target.epoch_index - self.anchor) % self.freq == 0)

    def caps(self, eta: float) -> np.ndarray:
        return np.minimum(GLOBAL_FUND_CAP, self.cap_room / eta)

    def floors(self, w: np.ndarray) -> np.ndarray:
        f = np.where(w > 0, self.min_w, 0.0)
        return np.where(self.closed, np.maximum(f, w), f)

    def bounds(self, idx, w, caps, floors, alloc_ok, redeem_ok) -> dict:
        out = {}
        for i in idx:
            cap = caps[i] if alloc_ok[i] else w[i]
            fl = min(floors[i], caps[i]) if floors[i] > caps[i] else floors[i]
            out[self.ids[i]] = FundBounds(self.ids[i], float(cap), float(fl), bool(alloc_ok[i]), bool(redeem_ok[i]))
        return out


class _Step:
    """Mutable working set for one projected month."""

    def __init__(self, vin: _Vintage, target: MonthId, w: np.ndarray, resid: np.ndarray, eta: float):
        self.vin = vin
        self.target = target
        self.w = w
        self.resid = resid
        self.eta = eta
        self.caps = vin.caps(eta)
        self.feasible = vin.feasible(target)
        self.moves: dict = {}  # (fund index, reason) -> delta
        self.redeemed = np.zeros(len(w), dtype=bool)
        self.diags: list = []

    def move(self, fund: str, delta: float, reason: Reason, lag_months: int = 0):
        i = self.vin.pos[fund]
        self.w[i] += delta
        if abs(self.w[i]) < 1e-15:
            self.w[i] = 0.0
        key = (i, reason)
        self.moves[key] = self.moves.get(key, 0.0) + delta
        if delta < 0:
            self.redeemed[i] = True

    def sw(self) -> np.ndarray:
        return np.bincount(self.vin.strat, weights=self.w, minlength=self.vin.nstrat)

    def diag(self, kind, amount, strategy="", fund="", detail=""):
        self.diags.append(Diagnostic(self.vin.as_of, self.target, kind, strategy, fund, float(amount), detail))


def _redeem_funds(step: _Step, vin: _Vintage):
    """Removals of ineligible funds and fund-cap breaches."""
    tol = 1e-12
    for i in np.flatnonzero((step.w > tol) & ~vin.eligible):
        fid = vin.ids[i]
        if step.feasible[i]:
            step.move(fid, -step.w[i], Reason.FUND_INELIGIBLE)
        else:
            step.diag("unplaced_redemption", step.w[i], vin.strategies[vin.strat[i]], fid, "fund_ineligible:liquidity")
    over = step.w - step.caps
    for i in np.flatnonzero((over > tol) & vin.eligible):
        fid = vin.ids[i]
        if step.feasible[i]:
            step.move(fid, -over[i], Reason.FUND_CAP)
        else:
            step.diag("unplaced_redemption", over[i], vin.strategies[vin.strat[i]], fid, "fund_cap:liquidity")


def _strategy_caps(step: _Step, vin: _Vintage):
    sw = step.sw()
    breaches = strategy_cap_breaches(dict(zip(vin.strategies, sw)), dict(zip(vin.strategies, vin.tsw)))
    floors = vin.floors(step.w)
    redeem_ok = step.feasible & (step.w > 0)
    for s in breaches:
        k = vin.strategies.index(s)
        need = sw[k] - vin.tsw[k]
        step.diag("strategy_breach", sw[k] - CAP_MULTIPLIER * vin.tsw[k], s, detail=f"sw={sw[k]:.6g} tsw={vin.tsw[k]:.6g}")
        idx = np.flatnonzero((vin.strat == k) & (step.w > 0))
        current = {vin.ids[i]: float(step.w[i]) for i in idx}
        bounds = vin.bounds(idx, step.w, step.caps, floors, np.zeros(len(step.w), bool), redeem_ok)
        res = redeem_within_strategy(current, need, bounds, reason=Reason.STRATEGY_CAP)
        for fid, d in sorted(res.deltas.items()):
            step.move(fid, d, Reason.STRATEGY_CAP)
        if res.unplaced < -ARW_TOL:
            blocked = any(not step.feasible[i] for i in idx)
            why = "liquidity" if blocked else "floor"
            step.diag("unplaced_redemption", -res.unplaced, s, detail=f"strategy_cap:{why}")


def _allocate(step: _Step, vin: _Vintage, arw: float):
    w = step.w
    alloc_ok = vin.allocatable & ~step.redeemed
    hi = np.maximum(w, np.minimum(step.caps, ALLOCATION_CEILING))
    members = w > 0
    sw = step.sw()
    count = np.bincount(vin.strat, weights=members.astype(float), minlength=vin.nstrat)
    tsw = dict(zip(vin.strategies, vin.tsw))
    floors = vin.floors(w)
    member_ids = {vin.ids[i] for i in np.flatnonzero(members)}
    extra: dict = {}  # strategy -> candidate funds chosen for count shortfall
    capacity = {}
    pools = {}
    for k, s in enumerate(vin.strategies):
        short = int(vin.counts[k] - count[k])
        new = select_new_funds(s, short, vin.candidates[k], member_ids) if short > 0 else []
        extra[s] = set(new)
        idx = np.flatnonzero((vin.strat == k) & members & alloc_ok)
        idx = np.union1d(idx, [vin.pos[f] for f in new]).astype(int)
        pools[s] = idx
        room = float(np.sum(hi[idx] - w[idx]))
        capacity[s] = max(0.0, min(room, CAP_MULTIPLIER * vin.tsw[k] - sw[k] - CAP_MARGIN))

    def place(s, amount, idx, new_funds):
        current = {vin.ids[i]: float(w[i]) for i in idx}
        bounds = vin.bounds(idx, w, step.caps, floors, alloc_ok, step.feasible)
        res = allocate_within_strategy(current, amount, bounds)
        for fid, d in sorted(res.deltas.items()):
            step.move(fid, d, Reason.COUNT_SHORTFALL if fid in new_funds else Reason.INFLOW)
        return res.placed

    split = distribute_allocation_across_strategies(arw, dict(zip(vin.strategies, sw)), tsw, capacity)
    placed = 0.0
    for s, a in sorted(split.deltas.items()):
        placed += place(s, a, pools[s], extra[s])
    remaining = arw - placed

    # excess: add funds beyond the target count to strategies still short
    if remaining > ARW_TOL:
        sw = step.sw()
        member_ids = {vin.ids[i] for i in np.flatnonzero(w > 0)}
        room = {}
        for k, s in enumerate(vin.strategies):
            if sw[k] >= vin.tsw[k]:
                continue
            free = [f for f in vin.candidates[k] if f not in member_ids]
            cap_new = sum(min(step.caps[vin.pos[f]], ALLOCATION_CEILING) for f in free)
            room[s] = max(0.0, min(cap_new, CAP_MULTIPLIER * vin.tsw[k] - sw[k] - CAP_MARGIN))
        split = distribute_allocation_across_strategies(remaining, dict(zip(vin.strategies, sw)), tsw, room)
        for s, a in sorted(split.deltas.items()):
            k = vin.strategies.index(s)
            n_new = max(1, math.ceil(a / ALLOCATION_CEILING - 1e-9))
            new = select_new_funds(s, n_new, vin.candidates[k], member_ids)
            idx = np.array(sorted(vin.pos[f] for f in new), dtype=int)
            remaining -= place(s, a, idx, set())

    # last resort: any strategy with room below its cap
    if remaining > ARW_TOL:
        sw = step.sw()
        capacity = {}
        pools = {}
        for k, s in enumerate(vin.strategies):
            idx = np.flatnonzero((vin.strat == k) & (w > 0) & alloc_ok)
            pools[s] = idx
            room = float(np.sum(hi[idx] - w[idx]))
            capacity[s] = max(0.0, min(room, CAP_MULTIPLIER * vin.tsw[k] - sw[k] - CAP_MARGIN))
        split = spill_across_strategies(remaining, dict(zip(vin.strategies, sw)), tsw, capacity)
        for s, a in sorted(split.deltas.items()):
            remaining -= place(s, a, pools[s], set())

    if remaining > ARW_TOL:
        step.diag("unplaced_allocation", remaining, detail="no capacity")


def _redeem(step: _Step, vin: _Vintage, arw: float):
    w = step.w
    floors = vin.floors(w)
    # proceeds from lagged funds arrive after the outflow date, so they cannot fund it
    liquid = step.feasible & (vin.lag == 0)
    redeem_ok = liquid & (w > 0)
    room = np.where(redeem_ok, np.maximum(0.0, w - floors), 0.0)
    tsw = dict(zip(vin.strategies, vin.tsw))

    def take(s, amount):
        k = vin.strategies.index(s)
        idx = np.flatnonzero((vin.strat == k) & (w > 0))
        current = {vin.ids[i]: float(w[i]) for i in idx}
        bounds = vin.bounds(idx, w, step.caps, floors, np.zeros(len(w), bool), redeem_ok)
        res = redeem_within_strategy(current, amount, bounds, reason=Reason.OUTFLOW)
        for fid, d in sorted(res.deltas.items()):
            step.move(fid, d, Reason.OUTFLOW)
        return res.placed

    sw = step.sw()
    redeemable = dict(zip(vin.strategies, np.bincount(vin.strat, weights=room, minlength=vin.nstrat)))
    split = distribute_redemption_across_strategies(arw, dict(zip(vin.strategies, sw)), tsw, redeemable)
    remaining = arw
    for s, a in sorted(split.deltas.items()):
        remaining -= take(s, -a)
    if remaining < -ARW_TOL:
        floors = vin.floors(w)
        room = np.where(liquid & (w > 0), np.maximum(0.0, w - floors), 0.0)
        redeemable = dict(zip(vin.strategies, np.bincount(vin.strat, weights=room, minlength=vin.nstrat)))
        split = spill_across_strategies(remaining, dict(zip(vin.strategies, step.sw())), tsw, redeemable)
        for s, a in sorted(split.deltas.items()):
            remaining -= take(s, -a)
    if remaining < -ARW_TOL:
        step.diag("unplaced_redemption", -remaining, detail="outflow:liquidity")


def project_and_schedule(state: EngineState, as_of: MonthId, horizon: Optional[int] = None) -> EngineState:
    """Project ``horizon`` months past ``as_of`` and rebuild the adjustment schedule."""
    if as_of not in state.ledgers:
        raise KeyError(f"no ledger for {as_of}")
    horizon = state.horizon if horizon is None else horizon
    ledger = state.ledgers[as_of]
    vin = _Vintage(state, as_of)
    n = len(vin.ids)
    notionals = state.notionals

    kept = tuple(e for e in state.schedule if _locked(e, state.funds[e.fund].terms, as_of))
    pending = [e for e in kept if e.effective > as_of]

    def eta_b(m):
        return float(notionals.begin(m, as_of))

    def eta_e(m):
        return float(notionals.end(m, as_of))

    months = [as_of + k for k in range(1, horizon + 1)]
    resid_cash = {m: np.zeros(n) for m in months}
    for claim in state.residuals:
        for m in months:
            if claim.first <= m <= claim.last and claim.fund in vin.pos:
                resid_cash[m][vin.pos[claim.fund]] += claim.amount
    for e in pending:
        lag = state.funds[e.fund].terms.settlement_lag_months
        if e.weight < 0 and lag > 0:
            for m in months:
                if e.effective <= m < e.effective + lag:
                    resid_cash[m][vin.pos[e.fund]] += -e.amount

    def vec(d):
        out = np.zeros(n)
        for f, v in d.items():
            if f in vin.pos:
                out[vin.pos[f]] = v
        return out

    active = vec(ledger.end_weights) - vec(ledger.residual_weights)
    prev = as_of
    new_entries, diags, records = [], [], []
    for t in months:
        eb, ee = eta_b(t), eta_e(prev)
        sched = np.zeros(n)
        for e in pending:
            if e.effective == t:
                sched[vin.pos[e.fund]] += e.amount / eb
        pfw = active * (ee / eb) + sched
        neg = pfw < 0
        if neg.any():
            diags.append(Diagnostic(as_of, t, "clamped_mass", amount=float(-pfw[neg].sum())))
            pfw[neg] = 0.0
        resid = resid_cash[t] / eb
        step = _Step(vin, t, pfw.copy(), resid, eb)

        _redeem_funds(step, vin)
        _strategy_caps(step, vin)
        # proceeds of lagged redemptions stay residual until received
        for (i, reason), d in list(step.moves.items()):
            if d < 0 and vin.lag[i] > 0:
                cash = -d * eb
                for m in months:
                    if t <= m < t + int(vin.lag[i]):
                        resid_cash[m][i] += cash
                step.resid[i] += -d
        arw = 1.0 - math.fsum(step.w) - math.fsum(step.resid)
        if arw > ARW_TOL:
            _allocate(step, vin, arw)
        elif arw < -ARW_TOL:
            _redeem(step, vin, arw)

        for (i, reason), d in sorted(step.moves.items(), key=lambda kv: (vin.ids[kv[0][0]], kv[0][1].value)):
            if abs(d) > 1e-15:
                new_entries.append(AdjustmentEntry(vin.ids[i], as_of, t, float(d), int(round(eb)), reason))
        diags.extend(step.diags)

        efw = step.w + step.resid
        total = efw.sum()
        if total > 0:
            swn = np.bincount(vin.strat, weights=step.w, minlength=vin.nstrat) / total
            for k, s in enumerate(vin.strategies):
                limit = CAP_MULTIPLIER * vin.tsw[k]
                if swn[k] > 0 and swn[k] >= limit:
                    diags.append(Diagnostic(as_of, t, "breach_unresolved", s, amount=float(swn[k] - limit)))
        nz = lambda a: {vin.ids[i]: float(a[i]) for i in np.flatnonzero(a)}
        records.append(
            ProjectionRecord(
                as_of, t, nz(pfw), nz(efw), nz(step.resid),
                float(1.0 - math.fsum(pfw) - math.fsum(resid)),
            )
        )
        active = step.w
        prev = t

    diagnostics = tuple(d for d in state.diagnostics if d.as_of != as_of) + tuple(diags)
    return replace(
        state,
        schedule=kept + tuple(new_entries),
        diagnostics=diagnostics,
        projections=tuple(records),
    )


# -- month transitions --------------------------------------------------------------


def _fee(state: EngineState) -> float:
    return monthly_fee(FeeSchedule(annual_fee=state.annual_fee))


def _navs(state: EngineState, month: MonthId, funds) -> dict:
    out = {}
    for f in funds:
        rec = state.funds.get(f)
        if rec is not None and month in rec.nav_returns:
            out[f] = rec.nav_returns[month]
    return out


def _active_sw(state: EngineState, weights: Mapping, residuals: Mapping) -> dict:
    active = {f: w - residuals.get(f, 0.0) for f, w in weights.items()}
    sw = realized_strategy_weights(active, state.membership)
    return {s: sw.get(s, 0.0) for s in state.strategies}


def _divergence(state, month, targets, sw) -> Optional[Diagnostic]:
    total = sum(t.tsw for t in targets.values()) or 1.0
    gap = 0.5 * sum(abs(sw.get(s, 0.0) - t.tsw / total) for s, t in targets.items())
    if gap > DIVERGENCE_THRESHOLD:
        return Diagnostic(None, month, "tracking_divergence", amount=gap, detail="restart provision not executed")
    return None


def _respect_caps(weights: dict, funds: Mapping[str, FundRecord], eta: int) -> tuple:
    """Clip opening weights at each fund's cap and water-fill the excess into funds with room.

    Returns the weights and any excess that found no room (kept pro rata).
    """
    bounds = {f: effective_fund_bounds(funds[f], funds[f].non_index_exposure_usd, eta) for f in weights}
    caps = {f: bounds[f].cap_weight for f in weights}
    excess = math.fsum(max(0.0, w - caps[f]) for f, w in weights.items())
    if excess <= ARW_TOL:
        return weights, 0.0
    clipped = {f: min(w, caps[f]) for f, w in weights.items()}
    room = {f: FundBounds(f, caps[f]) for f in weights}
    res = allocate_within_strategy(clipped, excess, room, ceiling=GLOBAL_FUND_CAP)
    out = {f: w + res.deltas.get(f, 0.0) for f, w in clipped.items()}
    spare = max(0.0, res.unplaced)
    total = math.fsum(out.values())
    return {f: w / total for f, w in out.items()}, spare


def initial_state(
    funds,
    limits: Mapping[str, float],
    notionals: NotionalSchedule,
    start: MonthId,
    *,
    annual_fee: float = 0.0095,
    policy: EligibilityPolicy = EligibilityPolicy(),
    horizon: int = DEFAULT_HORIZON,
    base_level: float = DEFAULT_BASE_LEVEL,
) -> EngineState:
    """Open the index at ``start`` with equal weights inside each strategy."""
    funds = {f.fund: f for f in funds}
    state = EngineState(funds, dict(limits), notionals, horizon=horizon, annual_fee=annual_fee, policy=policy)
    targets = state.targets_as_of(start - 1)
    eligible = {
        f.fund: (f.strategy, f.aum(start))
        for f in funds.values()
        if eligibility_screen(f, start, policy) and not f.terms.closed_to_new_investment
    }
    tsw, counts, members, diags = {}, {}, {}, []
    for s, t in targets.items():
        chosen = select_new_funds(s, t.target_fund_count, eligible)
        if t.tsw > 0 and not chosen:
            diags.append(Diagnostic(None, start, "no_eligible_funds", s))
            continue
        tsw[s], counts[s], members[s] = t.tsw, len(chosen), chosen
    weights = initial_equal_weights(tsw, counts, members)
    weights, spare = _respect_caps(weights, funds, notionals.begin(start))
    if spare > ARW_TOL:
        diags.append(Diagnostic(None, start, "initial_cap_unplaced", amount=spare))
    ledger = compute_month(start, base_level, weights, _navs(state, start, weights), _fee(state))
    sw = _active_sw(state, weights, {})
    tg = {s: replace(t, sw=sw.get(s, 0.0)) for s, t in targets.items()}
    return replace(state, ledgers={start: ledger}, targets={start: tg}, diagnostics=tuple(diags))


def apply_month_transition(
    state: EngineState,
    month: MonthId,
    executions: Optional[Mapping[str, int]] = None,
    notional_end: Optional[int] = None,
    notional_begin: Optional[int] = None,
) -> EngineState:
    """Move from the end of ``month`` to the start of the next one.

    ``executions`` gives the cents actually moved per fund (signed); funds not
    listed are assumed to have executed exactly as scheduled. Any mismatch is
    absorbed by the normalization factor, never by rewriting adjustments.
    """
    ledger = state.ledgers[month]
    nxt = month + 1
    executions = executions or {}
    eta_e = notional_end if notional_end is not None else state.notionals.end(month)
    eta_b = notional_begin if notional_begin is not None else state.notionals.begin(nxt)

    due = [e for e in state.schedule if e.effective == nxt]
    scheduled: dict = {}
    for e in due:
        scheduled[e.fund] = scheduled.get(e.fund, 0.0) + e.amount
    executed = []
    for e in due:
        if e.fund in executions and scheduled[e.fund] != 0:
            executed.append(replace(e, weight=e.weight * executions[e.fund] / scheduled[e.fund]))
        else:
            executed.append(e)
    for f in sorted(set(executions) - set(scheduled)):
        amt = executions[f]
        if amt:
            reason = Reason.INFLOW if amt > 0 else Reason.OUTFLOW
            executed.append(AdjustmentEntry(f, month, nxt, amt / eta_b, eta_b, reason))

    claims = [c for c in state.residuals if c.last >= nxt]
    for e in executed:
        lag = state.funds[e.fund].terms.settlement_lag_months if e.fund in state.funds else 0
        if e.weight < 0 and lag > 0:
            claims.append(ResidualClaim(e.fund, -e.amount, nxt, nxt + (lag - 1)))
    next_resid: dict = {}
    for c in claims:
        if c.first <= nxt <= c.last:
            next_resid[c.fund] = next_resid.get(c.fund, 0.0) + c.amount / eta_b

    prelim = preliminary_weights(
        ledger.end_weights, ledger.residual_weights, eta_e, eta_b, executed, next_resid, month=nxt
    )
    weights, gamma = normalize_weights(prelim)
    gap = flow_consistency_gap(eta_b, eta_e, next_resid, ledger.residual_weights, executed)
    weights = {f: w for f, w in weights.items() if w > 0}
    begin_resid = {f: gamma * d for f, d in next_resid.items() if d > 0}
    if abs(math.fsum(weights.values()) - 1.0) > 1e-12:
        raise InvariantViolation(f"{nxt}: begin weights do not sum to one")

    new_ledger = compute_month(
        nxt,
        ledger.level_end,
        weights,
        _navs(state, nxt, weights),
        _fee(state),
        begin_residuals=begin_resid,
        normalization_factor=gamma,
        flow_gap=gap,
        clamped_mass=prelim.clamped_mass,
    )
    ledgers = dict(state.ledgers)
    ledgers[month] = replace(ledger, next_residual=next_resid)
    ledgers[nxt] = new_ledger

    sw = _active_sw(state, weights, begin_resid)
    targets = state.targets_as_of(month, sw)
    all_targets = dict(state.targets)
    all_targets[nxt] = targets

    diags = []
    if abs(gap) >= 0.5:
        diags.append(Diagnostic(month, nxt, "flow_gap", amount=gap / 100.0, detail=f"gamma={gamma!r}"))
    if prelim.clamped_mass > 0:
        diags.append(Diagnostic(month, nxt, "clamped_mass", amount=prelim.clamped_mass))
    div = _divergence(state, nxt, targets, sw)
    if div is not None:
        diags.append(div)
    return replace(
        state,
        ledgers=ledgers,
        targets=all_targets,
        residuals=tuple(claims),
        diagnostics=state.diagnostics + tuple(diags),
    )


# -- serialization --------------------------------------------------------------------


def _m(m: Optional[MonthId]) -> Optional[str]:
    return None if m is None else str(m)


def _pm(s: Optional[str]) -> Optional[MonthId]:
    return None if s is None else MonthId.parse(s)


def _ledger_to_dict(l: MonthLedger) -> dict:
    d = {f.name: getattr(l, f.name) for f in fields(l)}
    d = {k: dict(v) if isinstance(v, Mapping) else v for k, v in d.items()}
    d["month"] = str(l.month)
    d["finalized_navs"] = sorted(l.finalized_navs)
    return d


def _ledger_from_dict(d: dict) -> MonthLedger:
    d = dict(d)
    d["month"] = MonthId.parse(d["month"])
    d["finalized_navs"] = frozenset(d["finalized_navs"])
    return MonthLedger(**d)


def _fund_to_dict(f: FundRecord) -> dict:
    return {
        "fund": f.fund,
        "strategy": f.strategy,
        "terms": asdict(f.terms),
        "aum_series": {str(m): v for m, v in f.aum_series.items()},
        "nav_returns": {str(m): v for m, v in f.nav_returns.items()},
        "due_diligence_passed": f.due_diligence_passed,
        "non_index_exposure_usd": f.non_index_exposure_usd,
        "eligible": {str(m): v for m, v in f.eligible.items()},
    }


def _fund_from_dict(d: dict) -> FundRecord:
    return FundRecord(
        fund=d["fund"],
        strategy=d["strategy"],
        terms=FundTerms(**d["terms"]),
        aum_series={MonthId.parse(m): v for m, v in sorted(d["aum_series"].items())},
        nav_returns={MonthId.parse(m): v for m, v in sorted(d["nav_returns"].items())},
        due_diligence_passed=d["due_diligence_passed"],
        non_index_exposure_usd=d["non_index_exposure_usd"],
        eligible={MonthId.parse(m): v for m, v in sorted(d["eligible"].items())},
    )


def _entry_to_dict(e: AdjustmentEntry) -> dict:
    return {
        "fund": e.fund, "decided_in": str(e.decided_in), "effective": str(e.effective),
        "weight": e.weight, "notional_estimate": e.notional_estimate, "reason": e.reason.value,
    }


def _entry_from_dict(d: dict) -> AdjustmentEntry:
    return AdjustmentEntry(
        d["fund"], MonthId.parse(d["decided_in"]), MonthId.parse(d["effective"]),
        d["weight"], d["notional_estimate"], Reason(d["reason"]),
    )


def state_to_dict(state: EngineState) -> dict:
    n = state.notionals
    return {
        "funds": [_fund_to_dict(state.funds[f]) for f in sorted(state.funds)],
        "limits": dict(state.limits),
        "notionals": {
            "actual_begin": {str(m): v for m, v in n.actual_begin.items()},
            "actual_end": {str(m): v for m, v in n.actual_end.items()},
            "estimates": [[str(e), str(v), a] for (e, v), a in sorted(n.estimates.items())],
        },
        "ledgers": {str(m): _ledger_to_dict(l) for m, l in state.ledgers.items()},
        "schedule": [_entry_to_dict(e) for e in state.schedule],
        "targets": {
            str(m): {s: asdict(t) for s, t in tg.items()} for m, tg in state.targets.items()
        },
        "horizon": state.horizon,
        "annual_fee": state.annual_fee,
        "policy": asdict(state.policy),
        "residuals": [
            {"fund": c.fund, "amount": c.amount, "first": str(c.first), "last": str(c.last)}
            for c in state.residuals
        ],
        "diagnostics": [
            {**asdict(d), "as_of": _m(d.as_of), "target": str(d.target)} for d in state.diagnostics
        ],
        "projections": [
            {
                "as_of": str(p.as_of), "target": str(p.target), "projected": p.projected,
                "estimated": p.estimated, "residual": p.residual,
                "aggregate_reallocation": p.aggregate_reallocation,
            }
            for p in state.projections
        ],
    }


def state_from_dict(d: dict) -> EngineState:
    n = d["notionals"]
    notionals = NotionalSchedule(
        {MonthId.parse(m): v for m, v in sorted(n["actual_begin"].items())},
        {MonthId.parse(m): v for m, v in sorted(n["actual_end"].items())},
        {(MonthId.parse(e), MonthId.parse(v)): a for e, v, a in n["estimates"]},
    )
    return EngineState(
        funds={f["fund"]: _fund_from_dict(f) for f in d["funds"]},
        limits=dict(d["limits"]),
        notionals=notionals,
        ledgers={MonthId.parse(m): _ledger_from_dict(l) for m, l in sorted(d["ledgers"].items())},
        schedule=tuple(_entry_from_dict(e) for e in d["schedule"]),
        targets={
            MonthId.parse(m): {s: StrategyTargets(**t) for s, t in sorted(tg.items())}
            for m, tg in sorted(d["targets"].items())
        },
        horizon=d["horizon"],
        annual_fee=d["annual_fee"],
        policy=EligibilityPolicy(**d["policy"]),
        residuals=tuple(
            ResidualClaim(c["fund"], c["amount"], MonthId.parse(c["first"]), MonthId.parse(c["last"]))
            for c in d["residuals"]
        ),
        diagnostics=tuple(
            Diagnostic(**{**x, "as_of": _pm(x["as_of"]), "target": MonthId.parse(x["target"])})
            for x in d["diagnostics"]
        ),
        projections=tuple(
            ProjectionRecord(
                MonthId.parse(p["as_of"]), MonthId.parse(p["target"]), p["projected"],
                p["estimated"], p["residual"], p["aggregate_reallocation"],
            )
            for p in d["projections"]
        ),
    )
