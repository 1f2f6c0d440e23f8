"""Domain types, month calendar and fee conventions shared by every engine.

Weights, returns and fee rates are plain floats (1.0 = 100%). Dollar amounts
(notionals, AUM, exposure caps, executions) are integer cents so that flow
accounting is exact; use :func:`usd` / :func:`to_usd` at the edges.
"""

from __future__ import annotations

import calendar
import math
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from typing import Dict, Mapping, Optional

from .errors import InvalidCalendarError

FundId = str
StrategyId = str
WeightVector = Dict[FundId, float]
Cents = int

#: Tolerance for "sums to one" checks on weight vectors.
WEIGHT_TOL = 1e-9
#: Tolerance for algebraic identities that should hold to rounding error.
IDENTITY_TOL = 1e-12

DEFAULT_ANNUAL_FEE = 0.0095
DEFAULT_BASE_LEVEL = 1000.0
FINALIZATION_DAYS = 45
DEFAULT_STRATEGIES = tuple(f"S{i}" for i in range(1, 10))


def usd(amount: float | int | str) -> Cents:
    """Dollar amount -> integer cents (half away from zero)."""
    from decimal import ROUND_HALF_UP, Decimal

    return int((Decimal(str(amount)) * 100).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def to_usd(cents: float | int) -> float:
    return cents / 100.0


@dataclass(frozen=True, order=True)
class MonthId:
    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise InvalidCalendarError(f"month out of range: {self.month}")

    @classmethod
    def parse(cls, text: str) -> "MonthId":
        try:
            y, m = text.strip().split("-")[:2]
            return cls(int(y), int(m))
        except (ValueError, AttributeError):
            raise InvalidCalendarError(f"not an ISO year-month: {text!r}") from None

    @classmethod
    def from_ordinal(cls, ordinal: int) -> "MonthId":
        y, m0 = divmod(ordinal, 12)
        return cls(y, m0 + 1)

    @property
    def ordinal(self) -> int:
        """Months since year 0, January."""
        return self.year * 12 + self.month - 1

    @property
    def epoch_index(self) -> int:
        """1-based month count from January of year 1 (Jan 0001 -> 1)."""
        return (self.year - 1) * 12 + self.month

    def __add__(self, n: int) -> "MonthId":
        if not isinstance(n, int):
            return NotImplemented
        return MonthId.from_ordinal(self.ordinal + n)

    def __sub__(self, other):
        if isinstance(other, MonthId):
            return self.ordinal - other.ordinal
        if isinstance(other, int):
            return MonthId.from_ordinal(self.ordinal - other)
        return NotImplemented

    def days(self) -> int:
        return calendar.monthrange(self.year, self.month)[1]

    def last_day(self) -> date:
        return date(self.year, self.month, self.days())

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"

    def __repr__(self) -> str:
        return f"MonthId({self})"


def add_months(m: MonthId, n: int) -> MonthId:
    return m + n


def month_range(start: MonthId, end: MonthId) -> list[MonthId]:
    """Inclusive range of months."""
    return [start + k for k in range(end - start + 1)]


@dataclass(frozen=True)
class FeeSchedule:
    annual_fee: float = DEFAULT_ANNUAL_FEE
    days_into_month: int = 0
    total_days_in_month: int = 30

    def __post_init__(self):
        if self.total_days_in_month <= 0:
            raise InvalidCalendarError("total_days_in_month must be positive")
        if not 0 <= self.days_into_month <= self.total_days_in_month:
            raise InvalidCalendarError(
                f"days_into_month={self.days_into_month} outside [0, {self.total_days_in_month}]"
            )
        if self.annual_fee < 0:
            raise ValueError("annual_fee must be non-negative")


def monthly_fee(schedule: FeeSchedule, full_month: bool = True) -> float:
    """Fee charged against the index for one month, or the accrual so far."""
    monthly = schedule.annual_fee / 12
    if full_month:
        return monthly
    return schedule.days_into_month / schedule.total_days_in_month * monthly


@dataclass(frozen=True)
class FundTerms:
    redemption_frequency_months: int = 1
    notice_period_months: int = 0
    min_investment_weight: float = 0.0
    closed_to_new_investment: bool = False
    exposure_cap_usd: Optional[Cents] = None  # None = unbounded
    accepting_allocations: bool = True
    settlement_lag_months: int = 0
    grid_anchor: int = 0

    def __post_init__(self):
        if self.redemption_frequency_months < 1:
            raise ValueError("redemption_frequency_months must be >= 1")
        for name in ("notice_period_months", "min_investment_weight", "settlement_lag_months"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.exposure_cap_usd is not None and self.exposure_cap_usd < 0:
            raise ValueError("exposure_cap_usd must be non-negative")


@dataclass(frozen=True)
class FundRecord:
    fund: FundId
    strategy: StrategyId
    terms: FundTerms = field(default_factory=FundTerms)
    aum_series: Mapping[MonthId, Cents] = field(default_factory=dict)
    nav_returns: Mapping[MonthId, float] = field(default_factory=dict)
    due_diligence_passed: bool = True
    non_index_exposure_usd: Cents = 0
    eligible: Mapping[MonthId, bool] = field(default_factory=dict)

    def __post_init__(self):
        for m, v in self.aum_series.items():
            if v < 0:
                raise ValueError(f"{self.fund}: negative AUM in {m}")

    def aum(self, month: MonthId) -> Cents:
        return self.aum_series.get(month, 0)


class Reason(str, Enum):
    INFLOW = "inflow"
    OUTFLOW = "outflow"
    STRATEGY_CAP = "strategy_cap"
    FUND_CAP = "fund_cap"
    FUND_INELIGIBLE = "fund_ineligible"
    COUNT_SHORTFALL = "count_shortfall"


@dataclass(frozen=True)
class AdjustmentEntry:
    """A weight change decided in ``decided_in`` that takes effect at the start of ``effective``."""

    fund: FundId
    decided_in: MonthId
    effective: MonthId
    weight: float
    notional_estimate: Cents
    reason: Reason

    def __post_init__(self):
        if self.notional_estimate <= 0:
            raise ValueError("notional_estimate must be positive")
        if self.effective <= self.decided_in:
            raise ValueError("effective month must follow the decision month")

    @property
    def amount(self) -> float:
        """Signed dollar amount in cents."""
        return self.weight * self.notional_estimate


@dataclass(frozen=True)
class FundMonthRecord:
    """One NAV report (or revision) for a fund-month."""

    fund: FundId
    month: MonthId
    nav_return_estimate: float
    nav_finalized: bool = False
    admin_override: Optional[float] = None

    @property
    def effective_return(self) -> float:
        if self.admin_override is not None:
            return self.admin_override
        return self.nav_return_estimate


@dataclass(frozen=True)
class MonthLedger:
    month: MonthId
    level_begin: float
    index_return: float
    fee: float
    level_end: float
    begin_weights: WeightVector
    end_weights: WeightVector
    begin_residuals: WeightVector = field(default_factory=dict)
    residual_weights: WeightVector = field(default_factory=dict)
    next_residual: WeightVector = field(default_factory=dict)
    normalization_factor: float = 1.0
    nav_returns: Mapping[FundId, float] = field(default_factory=dict)
    fund_returns: Mapping[FundId, float] = field(default_factory=dict)
    admin_overrides: Mapping[FundId, float] = field(default_factory=dict)
    finalized_navs: frozenset = frozenset()
    flow_gap: float = 0.0
    clamped_mass: float = 0.0
    finalized: bool = False
    revision_count: int = 0


@dataclass(frozen=True)
class NotionalSchedule:
    """Actual and vintage-stamped estimated index notionals, in cents.

    ``estimates`` is keyed by ``(effective, vintage)``.
    """

    actual_begin: Mapping[MonthId, Cents] = field(default_factory=dict)
    actual_end: Mapping[MonthId, Cents] = field(default_factory=dict)
    estimates: Mapping[tuple, Cents] = field(default_factory=dict)

    def __post_init__(self):
        for book in (self.actual_begin, self.actual_end, self.estimates):
            for k, v in book.items():
                if v < 0:
                    raise ValueError(f"negative notional at {k}")
        for effective, vintage in self.estimates:
            if vintage > effective:
                raise ValueError(f"estimate vintage {vintage} after effective month {effective}")

    def _actual(self, book, month: MonthId, vintage: Optional[MonthId]):
        if month in book and (vintage is None or month <= vintage):
            return book[month]
        return None

    def begin(self, month: MonthId, vintage: Optional[MonthId] = None) -> Cents:
        """Beginning-of-month notional as known at ``vintage`` (None = actual)."""
        return self._lookup(self.actual_begin, month, vintage)

    def end(self, month: MonthId, vintage: Optional[MonthId] = None) -> Cents:
        book = self.actual_end if self.actual_end else self.actual_begin
        return self._lookup(book, month, vintage)

    def _lookup(self, book, month: MonthId, vintage: Optional[MonthId]) -> Cents:
        v = self._actual(book, month, vintage)
        if v is not None:
            return v
        if vintage is not None:
            best = None
            for (eff, vin), amount in self.estimates.items():
                if eff == month and vin <= vintage and (best is None or vin > best[0]):
                    best = (vin, amount)
            if best is not None:
                return best[1]
        # flat extrapolation from the last known actual
        known = [m for m in book if vintage is None or m <= vintage]
        earlier = [m for m in known if m <= month]
        if earlier:
            return book[max(earlier)]
        if known:
            return book[min(known)]
        raise KeyError(f"no notional known for {month}")


@dataclass(frozen=True)
class ProjectionRecord:
    as_of: MonthId
    target: MonthId
    projected: WeightVector
    estimated: WeightVector
    residual: WeightVector
    aggregate_reallocation: float


@dataclass(frozen=True)
class StrategyTargets:
    strategy: StrategyId
    aw_12m_ma: float
    tswl: float
    tsw: float
    sw: float = 0.0
    target_fund_count: int = 0


def weight_sum(w: Mapping[FundId, float]) -> float:
    return math.fsum(w.values())


def is_normalized(w: Mapping[FundId, float], tol: float = WEIGHT_TOL) -> bool:
    return all(v >= 0 for v in w.values()) and abs(weight_sum(w) - 1.0) <= tol
