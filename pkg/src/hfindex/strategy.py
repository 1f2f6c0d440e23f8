"""Strategy targets from universe AUM, realized strategy weights, caps and fund counts."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .core import Cents, FundId, MonthId, StrategyId, StrategyTargets, WeightVector
from .errors import InsufficientDataError, MissingStrategyError, NoEligibleFundsError
from .weights import PreliminaryWeights, normalize_weights

MA_WINDOW = 12
CAP_MULTIPLIER = 1.2
FUNDS_PER_UNIT_WEIGHT = 250


@dataclass(frozen=True)
class UniverseSnapshot:
    month: MonthId
    strategy_aum: Mapping[StrategyId, Cents]
    fund_aum: Mapping[FundId, Cents] = field(default_factory=dict)

    def shares(self) -> dict:
        total = sum(self.strategy_aum.values())
        if total <= 0:
            return {s: 0.0 for s in self.strategy_aum}
        return {s: a / total for s, a in self.strategy_aum.items()}


def moving_average_shares(history: Sequence[UniverseSnapshot], window: int = MA_WINDOW) -> dict:
    if not history:
        raise InsufficientDataError("no universe history")
    recent = sorted(history, key=lambda s: s.month)[-window:]
    strategies = sorted({s for snap in recent for s in snap.strategy_aum})
    per = [snap.shares() for snap in recent]
    return {s: math.fsum(p.get(s, 0.0) for p in per) / len(per) for s in strategies}


def target_strategy_weights(
    history: Sequence[UniverseSnapshot], limits: Mapping[StrategyId, float]
) -> dict:
    """Capped 12-month moving average of each strategy's AUM share.

    With fewer than 12 snapshots the available ones are averaged. Capped
    values are not renormalized.
    """
    ma = moving_average_shares(history)
    missing = [s for s in ma if s not in limits]
    if missing:
        raise MissingStrategyError(f"no weight limit for strategies: {', '.join(missing)}")
    return {s: min(limits[s], ma[s]) for s in ma}


def realized_strategy_weights(
    weights: Mapping[FundId, float], membership: Mapping[FundId, StrategyId]
) -> dict:
    unmapped = [f for f in weights if f not in membership]
    if unmapped:
        raise MissingStrategyError(f"funds without strategy: {', '.join(sorted(unmapped))}")
    sw: dict = {s: 0.0 for s in sorted(set(membership.values()))}
    parts: dict = defaultdict(list)
    for f, w in weights.items():
        parts[membership[f]].append(w)
    for s, ws in parts.items():
        sw[s] = math.fsum(ws)
    return sw


def strategy_cap_breaches(
    sw: Mapping[StrategyId, float],
    tsw: Mapping[StrategyId, float],
    multiplier: float = CAP_MULTIPLIER,
) -> list:
    """Strategies at or above ``multiplier`` times their target (boundary counts).

    A strategy holding no weight is never reported.
    """
    return sorted(s for s, w in sw.items() if w > 0 and w >= multiplier * tsw.get(s, 0.0))


def target_fund_count(tsw: float) -> int:
    if tsw <= 0:
        return 0
    return max(1, math.floor(FUNDS_PER_UNIT_WEIGHT * tsw + 0.5))


def target_fund_counts(tsw: Mapping[StrategyId, float]) -> dict:
    return {s: target_fund_count(w) for s, w in tsw.items()}


def initial_equal_weights(
    tsw: Mapping[StrategyId, float],
    counts: Mapping[StrategyId, int],
    members: Mapping[StrategyId, Sequence[FundId]],
) -> WeightVector:
    """Equal weight TSW/N inside each strategy, rescaled to sum to one."""
    values = {}
    for s in sorted(tsw):
        t, n = tsw[s], counts.get(s, 0)
        if t <= 0:
            continue
        if n <= 0:
            raise NoEligibleFundsError(f"strategy {s} has target weight {t} but no funds")
        funds = list(members.get(s, ()))
        if len(funds) != n:
            raise ValueError(f"strategy {s}: {len(funds)} selected funds, count says {n}")
        for f in funds:
            values[f] = t / n
    weights, _ = normalize_weights(PreliminaryWeights(None, values))
    return weights


def build_targets(
    history: Sequence[UniverseSnapshot],
    limits: Mapping[StrategyId, float],
    sw: Mapping[StrategyId, float] | None = None,
) -> dict:
    ma = moving_average_shares(history)
    tsw = target_strategy_weights(history, limits)
    sw = sw or {}
    return {
        s: StrategyTargets(s, ma[s], limits[s], tsw[s], sw.get(s, 0.0), target_fund_count(tsw[s]))
        for s in sorted(tsw)
    }
