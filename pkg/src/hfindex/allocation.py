"""Water-filling allocations and Dutch-auction redemptions, within and across strategies.

Every routine reduces to one problem: given intervals ``[lo_i, hi_i]`` find the
level ``x`` with ``sum(clip(x, lo_i, hi_i) - lo_i) == amount``. The level
function is piecewise linear, so it is solved exactly by walking the sorted
breakpoints rather than by iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .core import Cents, FundId, FundRecord, Reason, StrategyId

GLOBAL_FUND_CAP = 0.01
ALLOCATION_CEILING = 0.0075
STRATEGY_CAP_FLOOR = 0.0025


@dataclass(frozen=True)
class FundBounds:
    fund: FundId
    cap_weight: float = GLOBAL_FUND_CAP
    floor_weight: float = 0.0
    available_for_allocation: bool = True
    available_for_redemption: bool = True
    redemption_forced: bool = False


@dataclass(frozen=True)
class AllocationResult:
    deltas: dict
    unplaced: float
    requested: float = 0.0
    level: Optional[float] = None

    @property
    def placed(self) -> float:
        return math.fsum(self.deltas.values())


def water_level(lo: Sequence[float], hi: Sequence[float], amount: float) -> float:
    """Smallest ``x`` with ``sum(clip(x, lo, hi) - lo) >= amount``.

    If ``amount`` exceeds the total capacity the top of the highest interval
    is returned. ``hi`` entries may be ``inf``.
    """
    if not lo:
        return 0.0
    if amount <= 0:
        return min(lo)
    events = sorted([(a, 1) for a in lo] + [(b, -1) for b in hi])
    filled, slope = 0.0, 0
    x = events[0][0]
    for value, step in events:
        if value > x:
            if slope > 0:
                gain = slope * (value - x)
                if filled + gain >= amount:
                    return x + (amount - filled) / slope
                filled += gain
            x = value
        slope += step
    return x


def _fill(lo: Sequence[float], hi: Sequence[float], amount: float) -> tuple[list, float]:
    x = water_level(lo, hi, amount)
    return [min(max(x, a), b) - a for a, b in zip(lo, hi)], x


def effective_fund_bounds(
    fund: FundRecord,
    non_index_exposure: Cents,
    index_notional: Cents,
    current_weight: float = 0.0,
    eligible: bool = True,
    available_for_redemption: bool = True,
    global_cap: float = GLOBAL_FUND_CAP,
) -> FundBounds:
    """Caps and floors for one fund at a given index notional.

    The exposure cap is shared with the rest of the bank, so exposure held
    outside the index is deducted first. Closed funds and funds refusing
    allocations are capped at their current weight; closed funds are also
    floored there. When the cap sits below the floor the cap wins.
    """
    if index_notional <= 0:
        raise ValueError("index notional must be positive")
    terms = fund.terms
    cap = global_cap
    if terms.exposure_cap_usd is not None:
        cap = min(cap, max(0, terms.exposure_cap_usd - non_index_exposure) / index_notional)
    closed = terms.closed_to_new_investment or not terms.accepting_allocations
    if closed:
        cap = min(cap, max(current_weight, 0.0))
    floor = terms.min_investment_weight if current_weight > 0 else 0.0
    if terms.closed_to_new_investment:
        floor = max(floor, current_weight)
    forced = cap < floor or current_weight > cap
    if cap < floor:
        floor = cap
    return FundBounds(
        fund=fund.fund,
        cap_weight=cap,
        floor_weight=floor,
        available_for_allocation=eligible and not closed,
        available_for_redemption=available_for_redemption,
        redemption_forced=forced,
    )


def allocate_within_strategy(
    current: Mapping[FundId, float],
    amount: float,
    bounds: Mapping[FundId, FundBounds],
    ceiling: float = ALLOCATION_CEILING,
) -> AllocationResult:
    """Raise the smallest weights first, never lifting a fund above its cap or ``ceiling``.

    Funds listed in ``bounds`` but absent from ``current`` start at zero.
    Funds already above the ceiling keep their weight.
    """
    if amount <= 0:
        return AllocationResult({}, amount, amount)
    funds = sorted(f for f, b in bounds.items() if b.available_for_allocation)
    lo = [current.get(f, 0.0) for f in funds]
    hi = [max(w, min(bounds[f].cap_weight, ceiling)) for f, w in zip(funds, lo)]
    fills, level = _fill(lo, hi, amount)
    deltas = {f: d for f, d in zip(funds, fills) if d > 0}
    return AllocationResult(deltas, amount - math.fsum(deltas.values()), amount, level if funds else None)


def redeem_within_strategy(
    current: Mapping[FundId, float],
    amount: float,
    bounds: Mapping[FundId, FundBounds],
    available: Optional[Iterable[FundId]] = None,
    reason: Reason = Reason.OUTFLOW,
    strategy_cap_floor: float = STRATEGY_CAP_FLOOR,
) -> AllocationResult:
    """Cut the largest weights down to a common level (Dutch auction).

    ``amount`` is positive; deltas come back negative. Floors apply except for
    ineligibility removals. Redemptions triggered by a strategy cap also stop at
    ``strategy_cap_floor``. Whatever cannot be redeemed is left in ``unplaced``.
    """
    if amount <= 0:
        return AllocationResult({}, -amount, -amount)
    pool = set(available) if available is not None else set(current)
    funds = sorted(
        f for f in pool
        if current.get(f, 0.0) > 0 and bounds.get(f, FundBounds(f)).available_for_redemption
    )
    lo, hi = [], []
    for f in funds:
        w = current[f]
        if reason is Reason.FUND_INELIGIBLE:
            stop = 0.0
        else:
            stop = bounds.get(f, FundBounds(f)).floor_weight
            if reason is Reason.STRATEGY_CAP:
                stop = max(stop, strategy_cap_floor)
        lo.append(-w)
        hi.append(-min(w, stop))
    fills, x = _fill(lo, hi, amount)
    deltas = {f: -d for f, d in zip(funds, fills) if d > 0}
    placed = math.fsum(deltas.values())
    return AllocationResult(deltas, -amount - placed, -amount, -x if funds else None)


def _split(gaps: Mapping[StrategyId, float], amount: float, capacity: Mapping) -> dict:
    names = sorted(gaps)
    lo = [-gaps[s] for s in names]
    hi = [capacity.get(s, math.inf) - gaps[s] for s in names]
    fills, _ = _fill(lo, hi, amount)
    return {s: d for s, d in zip(names, fills) if d > 0}


def distribute_allocation_across_strategies(
    arw: float,
    sw: Mapping[StrategyId, float],
    tsw: Mapping[StrategyId, float],
    capacity: Optional[Mapping[StrategyId, float]] = None,
) -> AllocationResult:
    """Spread a positive reallocation weight over under-weight strategies.

    The largest shortfall ``TSW - SW`` is closed first; once all shortfalls are
    level the strategies keep rising together, each up to its capacity.
    """
    if arw <= 0:
        return AllocationResult({}, arw, arw)
    capacity = capacity or {}
    gaps = {s: tsw[s] - sw.get(s, 0.0) for s in tsw if sw.get(s, 0.0) < tsw[s]}
    gaps = {s: g for s, g in gaps.items() if capacity.get(s, math.inf) > 0}
    deltas = _split(gaps, arw, capacity)
    return AllocationResult(deltas, arw - math.fsum(deltas.values()), arw)


def distribute_redemption_across_strategies(
    arw: float,
    sw: Mapping[StrategyId, float],
    tsw: Mapping[StrategyId, float],
    redeemable: Optional[Mapping[StrategyId, float]] = None,
) -> AllocationResult:
    """Redeem a negative reallocation weight from over-weight strategies, largest excess first."""
    if arw >= 0:
        return AllocationResult({}, arw, arw)
    redeemable = redeemable or {}
    gaps = {s: w - tsw.get(s, 0.0) for s, w in sw.items() if w > tsw.get(s, 0.0)}
    gaps = {s: g for s, g in gaps.items() if redeemable.get(s, math.inf) > 0}
    cuts = _split(gaps, -arw, redeemable)
    deltas = {s: -d for s, d in cuts.items()}
    return AllocationResult(deltas, arw - math.fsum(deltas.values()), arw)


def spill_across_strategies(
    amount: float,
    sw: Mapping[StrategyId, float],
    tsw: Mapping[StrategyId, float],
    capacity: Mapping[StrategyId, float],
) -> AllocationResult:
    """Last-resort split over every strategy with capacity (signed ``amount``).

    Positive amounts go to the strategies furthest below target first,
    negative amounts come from those furthest above.
    """
    if amount == 0:
        return AllocationResult({}, 0.0, 0.0)
    sign = 1.0 if amount > 0 else -1.0
    gaps = {s: sign * (tsw.get(s, 0.0) - sw.get(s, 0.0)) for s in capacity if capacity[s] > 0}
    parts = _split(gaps, abs(amount), capacity)
    deltas = {s: sign * d for s, d in parts.items()}
    return AllocationResult(deltas, amount - math.fsum(deltas.values()), amount)


def select_new_funds(
    strategy: StrategyId,
    shortfall_count: int,
    eligible: Mapping[FundId, tuple],
    members: Iterable[FundId] = (),
) -> list:
    """Largest-AUM eligible funds of ``strategy`` not yet in the index.

    ``eligible`` maps fund id to ``(strategy, aum)``. Ties go to the smaller id.
    """
    if shortfall_count <= 0:
        return []
    members = set(members)
    pool = [(-aum, f) for f, (s, aum) in eligible.items() if s == strategy and f not in members]
    pool.sort()
    return [f for _, f in pool[:shortfall_count]]
