"""Fund and index returns, level roll, end-of-month weights, NAV revision."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Optional

from .core import (
    FINALIZATION_DAYS,
    IDENTITY_TOL,
    WEIGHT_TOL,
    FundId,
    FundMonthRecord,
    MonthId,
    MonthLedger,
    WeightVector,
)
from .errors import (
    ConservationError,
    DegenerateDenominatorError,
    FinalizedMonthError,
    IncompleteDataError,
    InvariantViolation,
    LevelCollapseError,
)


@dataclass(frozen=True)
class AmountDecomposition:
    month: Optional[MonthId]
    amounts: dict
    pre_fee_amounts: dict
    pre_fee_level: float
    worst_fund: Optional[FundId] = None
    worst_error: float = 0.0


def fund_return_with_residual(total_weight: float, residual: float, fund_return: float) -> float:
    """Return earned by a fund position, part of which is residual (earns nothing)."""
    if residual < 0 or residual > total_weight:
        # a few ulps of slack: residual and weight come from the same gamma scaling
        if residual < 0 or residual - total_weight > IDENTITY_TOL * max(1.0, total_weight):
            raise InvariantViolation(
                f"residual weight {residual!r} exceeds fund weight {total_weight!r}"
            )
        residual = total_weight
    if total_weight == 0:
        return 0.0
    return (total_weight - residual) / total_weight * fund_return


def index_return(
    begin_weights: Mapping[FundId, float],
    fund_returns: Mapping[FundId, float],
    fee: float,
) -> float:
    missing = [f for f, w in begin_weights.items() if w > 0 and f not in fund_returns]
    if missing:
        raise IncompleteDataError("missing fund returns", missing)
    return math.fsum(w * fund_returns[f] for f, w in begin_weights.items() if w > 0) - fee


def roll_index_level(level: float, ret: float) -> float:
    if level <= 0:
        raise ValueError("index level must be positive")
    if ret <= -1.0:
        raise LevelCollapseError(f"index return {ret!r} wipes out the index")
    return level * (1.0 + ret)


def end_of_month_weights(
    begin_weights: Mapping[FundId, float],
    fund_returns: Mapping[FundId, float],
    kappa: float,
    fee: float,
) -> WeightVector:
    denom = 1.0 + kappa + fee
    if denom <= 0:
        raise DegenerateDenominatorError(f"1 + kappa + fee = {denom!r}")
    out = {f: w * (1.0 + fund_returns.get(f, 0.0)) / denom for f, w in begin_weights.items()}
    total = math.fsum(out.values())
    if abs(total - 1.0) > WEIGHT_TOL:
        raise InvariantViolation(
            f"end-of-month weights sum to {total!r}; kappa inconsistent with inputs?"
        )
    return out


def amount_decomposition(
    level: float,
    begin_weights: Mapping[FundId, float],
    fund_returns: Mapping[FundId, float],
    kappa: float,
    fee: float,
    month: Optional[MonthId] = None,
    tol: float = IDENTITY_TOL,
) -> AmountDecomposition:
    """Split the index level into per-fund amounts and check pre/post-fee conservation.

    Raises :class:`ConservationError` naming the worst fund when a per-fund
    identity misses by more than ``tol * level``.
    """
    amounts = {f: level * w for f, w in begin_weights.items()}
    pre_fee = {f: (1.0 + fund_returns.get(f, 0.0)) * mu for f, mu in amounts.items()}
    pre_fee_level = (1.0 + kappa + fee) * level
    level_next = roll_index_level(level, kappa)
    end_w = end_of_month_weights(begin_weights, fund_returns, kappa, fee)
    ratio = (1.0 + kappa + fee) / (1.0 + kappa)

    worst, worst_err = None, 0.0
    for f in sorted(amounts):
        err = abs(pre_fee[f] - ratio * level_next * end_w[f])
        if err > worst_err:
            worst, worst_err = f, err
    bound = tol * level
    if worst_err > bound:
        raise ConservationError(
            f"pre/post-fee amount identity off by {worst_err:.3e} for fund {worst}",
            worst_fund=worst,
            error=worst_err,
        )
    for name, got, want in (
        ("sum of amounts", math.fsum(amounts.values()), level),
        ("sum of pre-fee amounts", math.fsum(pre_fee.values()), pre_fee_level),
    ):
        if abs(got - want) > WEIGHT_TOL * level:
            raise ConservationError(f"{name} {got!r} != {want!r}")
    return AmountDecomposition(month, amounts, pre_fee, pre_fee_level, worst, worst_err)


def compute_month(
    month: MonthId,
    level_begin: float,
    begin_weights: Mapping[FundId, float],
    nav_returns: Mapping[FundId, float],
    fee: float,
    begin_residuals: Optional[Mapping[FundId, float]] = None,
    admin_overrides: Optional[Mapping[FundId, float]] = None,
    **extra,
) -> MonthLedger:
    """Build a month's ledger from its opening weights and the current NAV estimates."""
    begin_residuals = dict(begin_residuals or {})
    admin_overrides = dict(admin_overrides or {})
    missing = [f for f, w in begin_weights.items() if w > 0 and f not in nav_returns and f not in admin_overrides]
    if missing:
        raise IncompleteDataError(f"no NAV return for {month}", missing)
    rho = {}
    for f, w in begin_weights.items():
        r = admin_overrides.get(f, nav_returns.get(f, 0.0))
        rho[f] = fund_return_with_residual(w, begin_residuals.get(f, 0.0), r)
    kappa = index_return(begin_weights, rho, fee)
    end_w = end_of_month_weights(begin_weights, rho, kappa, fee)
    denom = 1.0 + kappa + fee
    resid_end = {f: z / denom for f, z in begin_residuals.items() if z > 0}
    return MonthLedger(
        month=month,
        level_begin=level_begin,
        index_return=kappa,
        fee=fee,
        level_end=roll_index_level(level_begin, kappa),
        begin_weights=dict(begin_weights),
        end_weights=end_w,
        begin_residuals={f: z for f, z in begin_residuals.items() if z > 0},
        residual_weights=resid_end,
        nav_returns={f: nav_returns[f] for f in begin_weights if f in nav_returns},
        fund_returns=rho,
        admin_overrides=admin_overrides,
        **extra,
    )


def revise_and_finalize_month(
    ledger: MonthLedger,
    revisions: Iterable[FundMonthRecord],
    as_of_day: int,
    finalization_days: int = FINALIZATION_DAYS,
) -> MonthLedger:
    """Apply NAV revisions to a month and finalize it once ``as_of_day`` days past month end.

    Redemption fees are expected to be folded into the revised return (or an
    admin override) by the caller.
    """
    if ledger.finalized:
        raise FinalizedMonthError(f"{ledger.month} is finalized")
    navs = dict(ledger.nav_returns)
    overrides = dict(ledger.admin_overrides)
    locked = set(ledger.finalized_navs)
    for rev in revisions:
        if rev.month != ledger.month:
            raise ValueError(f"revision for {rev.month} applied to {ledger.month}")
        if rev.fund in locked:
            same = navs.get(rev.fund) == rev.nav_return_estimate and overrides.get(rev.fund) == rev.admin_override
            if not same:
                raise FinalizedMonthError(f"NAV for {rev.fund} in {rev.month} is finalized")
            continue
        navs[rev.fund] = rev.nav_return_estimate
        if rev.admin_override is not None:
            overrides[rev.fund] = rev.admin_override
        else:
            overrides.pop(rev.fund, None)
        if rev.nav_finalized:
            locked.add(rev.fund)

    fresh = compute_month(
        ledger.month,
        ledger.level_begin,
        ledger.begin_weights,
        navs,
        ledger.fee,
        begin_residuals=ledger.begin_residuals,
        admin_overrides=overrides,
    )
    return replace(
        ledger,
        index_return=fresh.index_return,
        level_end=fresh.level_end,
        end_weights=fresh.end_weights,
        residual_weights=fresh.residual_weights,
        nav_returns={**ledger.nav_returns, **{f: v for f, v in navs.items()}},
        fund_returns=fresh.fund_returns,
        admin_overrides=overrides,
        finalized_navs=frozenset(locked),
        finalized=as_of_day >= finalization_days,
        revision_count=ledger.revision_count + 1,
    )
