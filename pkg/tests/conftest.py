import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=100, deadline=None)
settings.register_profile("ci", max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from hfindex.core import FundRecord, FundTerms, MonthId, NotionalSchedule, usd  # noqa: E402

BP = 1e-4


def make_fund(fid, strategy="S1", months=(), aum=500e6, ret=0.01, **terms):
    """A fund with flat AUM and flat returns over ``months``."""
    return FundRecord(
        fund=fid,
        strategy=strategy,
        terms=FundTerms(**terms),
        aum_series={m: usd(aum) for m in months},
        nav_returns={m: ret for m in months},
    )


def flat_notional(months, amount=100e6):
    book = {m: usd(amount) for m in months}
    return NotionalSchedule(book, book, {})


@pytest.fixture
def jan():
    return MonthId(2024, 1)
