"""Weights across the month boundary: preliminary weights, gamma, flow sum rule,
projected weights and the aggregate reallocation weight."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .core import AdjustmentEntry, Cents, FundId, MonthId, WeightVector
from .errors import EmptyIndexError, ZeroNotionalError


@dataclass(frozen=True)
class PreliminaryWeights:
    month: Optional[MonthId]
    values: WeightVector
    gamma: Optional[float] = None
    clamped_mass: float = 0.0  # total negative mass zeroed out


def _adjustment_terms(adjustments: Iterable[AdjustmentEntry], eta_next: Cents) -> dict:
    terms: dict = defaultdict(float)
    for adj in adjustments:
        terms[adj.fund] += adj.weight * adj.notional_estimate / eta_next
    return terms


def preliminary_weights(
    prev_end: Mapping[FundId, float],
    prev_residual: Mapping[FundId, float],
    eta_end: Cents,
    eta_next: Cents,
    adjustments: Iterable[AdjustmentEntry] = (),
    next_residual: Optional[Mapping[FundId, float]] = None,
    month: Optional[MonthId] = None,
) -> PreliminaryWeights:
    """Active weight carried over, plus adjustments effective next month, plus next residuals.

    Negative results (estimate drift) are clamped to zero and the clamped mass
    is reported on the result.
    """
    if eta_next <= 0:
        raise ZeroNotionalError(f"next-month notional is {eta_next}")
    next_residual = next_residual or {}
    scale = eta_end / eta_next
    adj = _adjustment_terms(adjustments, eta_next)
    funds = set(prev_end) | set(adj) | set(next_residual)
    values, clamped = {}, 0.0
    for f in sorted(funds):
        active = prev_end.get(f, 0.0) - prev_residual.get(f, 0.0)
        v = active * scale + adj.get(f, 0.0) + next_residual.get(f, 0.0)
        if v < 0:
            clamped -= v
            v = 0.0
        values[f] = v
    return PreliminaryWeights(month, values, None, clamped)


def normalize_weights(prelim: PreliminaryWeights) -> tuple[WeightVector, float]:
    total = math.fsum(prelim.values.values())
    if not total > 0:
        raise EmptyIndexError("preliminary weights sum to zero")
    gamma = 1.0 / total
    weights = {f: v * gamma for f, v in prelim.values.items()}
    return weights, gamma


def flow_consistency_gap(
    eta_next: Cents,
    eta_end: Cents,
    next_residual: Mapping[FundId, float],
    prev_residual: Mapping[FundId, float],
    adjustments: Iterable[AdjustmentEntry],
) -> float:
    """Client flow minus the fund-level changes that were booked, in cents.

    Zero means normalization would leave the weights untouched.
    """
    client_flow = eta_next - eta_end
    residual_change = math.fsum(d * eta_next for d in next_residual.values()) - math.fsum(
        z * eta_end for z in prev_residual.values()
    )
    booked = math.fsum(a.amount for a in adjustments)
    return client_flow - (residual_change + booked)


def projected_weights(
    as_of: MonthId,
    estimated: Mapping[FundId, float],
    residual: Mapping[FundId, float],
    eta_end: Cents,
    eta_next: Cents,
    adjustments: Iterable[AdjustmentEntry] = (),
) -> WeightVector:
    """Forward estimate of active weights; preliminary weights with no new residual.

    The adjustment term uses the vintage-``as_of`` estimate of next month's
    notional as denominator, like the preliminary weights do.
    """
    prelim = preliminary_weights(estimated, residual, eta_end, eta_next, adjustments, None)
    return prelim.values


def aggregate_reallocation_weight(
    projected: Mapping[FundId, float], residual: Mapping[FundId, float]
) -> float:
    """Positive: weight still to allocate. Negative: weight to redeem."""
    return 1.0 - math.fsum(projected.values()) - math.fsum(residual.values())
