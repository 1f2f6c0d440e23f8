"""Fund-of-hedge-funds index: monthly level, weight and rebalancing engine."""

from .core import (
    AdjustmentEntry,
    FeeSchedule,
    FundRecord,
    FundTerms,
    MonthId,
    MonthLedger,
    NotionalSchedule,
    Reason,
    StrategyTargets,
    monthly_fee,
    to_usd,
    usd,
)
from .projection import EngineState, apply_month_transition, project_and_schedule

__version__ = "0.1.0"
