import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hfindex.core import MonthId
from hfindex.errors import InsufficientDataError, MissingStrategyError, NoEligibleFundsError
from hfindex.strategy import (
    UniverseSnapshot,
    build_targets,
    initial_equal_weights,
    moving_average_shares,
    realized_strategy_weights,
    strategy_cap_breaches,
    target_fund_count,
    target_fund_counts,
    target_strategy_weights,
)

START = MonthId(2020, 1)


def history(share_rows):
    """Snapshots from per-month ``{strategy: aum}`` rows."""
    return [UniverseSnapshot(START + k, row) for k, row in enumerate(share_rows)]


class TestTargets:
    def test_constant_shares(self):
        h = history([{"A": 50, "B": 50}] * 12)
        assert target_strategy_weights(h, {"A": 1.0, "B": 1.0}) == {"A": 0.5, "B": 0.5}

    def test_limit_binds(self):
        h = history([{"A": 35, "B": 65}] * 12)
        assert target_strategy_weights(h, {"A": 0.30, "B": 1.0})["A"] == 0.30

    def test_twelve_month_mean(self):
        rows = [{"A": 20, "B": 80}] * 11 + [{"A": 44, "B": 56}]
        assert moving_average_shares(history(rows))["A"] == pytest.approx(0.22, abs=1e-15)

    def test_only_last_twelve_months_count(self):
        rows = [{"A": 100, "B": 0}] * 5 + [{"A": 20, "B": 80}] * 12
        assert moving_average_shares(history(rows))["A"] == pytest.approx(0.2)

    def test_short_history_uses_what_exists(self):
        rows = [{"A": 10, "B": 90}, {"A": 30, "B": 70}]
        assert moving_average_shares(history(rows))["A"] == pytest.approx(0.2)

    def test_capped_values_not_renormalized(self):
        h = history([{"A": 80, "B": 20}] * 12)
        tsw = target_strategy_weights(h, {"A": 0.3, "B": 1.0})
        assert math.fsum(tsw.values()) == pytest.approx(0.5)

    def test_empty_history(self):
        with pytest.raises(InsufficientDataError):
            target_strategy_weights([], {"A": 1.0})

    def test_missing_limit(self):
        with pytest.raises(MissingStrategyError):
            target_strategy_weights(history([{"A": 1, "B": 1}]), {"A": 1.0})

    @given(st.lists(st.lists(st.integers(0, 10**12), min_size=3, max_size=3).filter(any), min_size=1, max_size=30))
    def test_moving_average_sums_to_one(self, rows):
        h = history([dict(zip("ABC", r)) for r in rows])
        assert math.fsum(moving_average_shares(h).values()) == pytest.approx(1.0, abs=1e-9)

    @given(st.lists(st.integers(1, 10**9), min_size=2, max_size=2), st.floats(0.0, 1.0))
    def test_tsw_is_min(self, aum, limit):
        h = history([{"A": aum[0], "B": aum[1]}])
        tsw = target_strategy_weights(h, {"A": limit, "B": limit})
        ma = moving_average_shares(h)
        assert tsw == {s: min(limit, ma[s]) for s in "AB"}

    def test_build_targets_carries_counts_and_sw(self):
        t = build_targets(history([{"A": 20, "B": 80}]), {"A": 1.0, "B": 1.0}, {"A": 0.25})
        assert t["A"].target_fund_count == 50
        assert t["A"].sw == 0.25
        assert t["B"].sw == 0.0


class TestRealized:
    def test_single_strategy(self):
        sw = realized_strategy_weights({"F1": 0.4, "F2": 0.6}, {"F1": "A", "F2": "A", "F3": "B"})
        assert sw == {"A": 1.0, "B": 0.0}

    def test_two_strategies(self):
        assert realized_strategy_weights({"F1": 0.6, "F2": 0.4}, {"F1": "A", "F2": "B"}) == {"A": 0.6, "B": 0.4}

    def test_four_small_funds(self):
        sw = realized_strategy_weights({f"F{i}": 0.0025 for i in range(4)}, {f"F{i}": "A" for i in range(4)})
        assert sw["A"] == pytest.approx(0.01)

    def test_unmapped(self):
        with pytest.raises(MissingStrategyError):
            realized_strategy_weights({"X": 1.0}, {})

    @given(st.dictionaries(st.sampled_from([f"F{i}" for i in range(30)]), st.floats(0, 1), min_size=1))
    def test_partition_sums(self, weights):
        membership = {f: "ABC"[int(f[1:]) % 3] for f in weights}
        sw = realized_strategy_weights(weights, membership)
        assert math.fsum(sw.values()) == pytest.approx(math.fsum(weights.values()), abs=1e-12)


class TestCaps:
    def test_boundary_is_a_breach(self):
        assert strategy_cap_breaches({"A": 0.24}, {"A": 0.20}) == ["A"]

    def test_below(self):
        assert strategy_cap_breaches({"A": 0.23}, {"A": 0.20}) == []

    def test_above(self):
        assert strategy_cap_breaches({"A": 0.25}, {"A": 0.20}) == ["A"]

    def test_empty_strategy_never_breaches(self):
        assert strategy_cap_breaches({"A": 0.0}, {"A": 0.0}) == []

    def test_zero_target_with_weight_breaches(self):
        assert strategy_cap_breaches({"A": 0.01}, {"A": 0.0}) == ["A"]

    @given(st.floats(0.001, 1.0), st.floats(0.0, 1.0))
    def test_matches_definition(self, sw, tsw):
        assert (strategy_cap_breaches({"A": sw}, {"A": tsw}) == ["A"]) == (sw >= 1.2 * tsw)


class TestCounts:
    def test_exact_multiple(self):
        assert target_fund_count(0.20) == 50

    def test_zero(self):
        assert target_fund_count(0.0) == 0

    def test_floor_at_one(self):
        assert target_fund_count(0.003) == 1

    def test_half_rounds_up(self):
        assert target_fund_count(0.002) == 1  # 0.5 -> 1
        assert target_fund_count(0.006) == 2  # 1.5 -> 2

    def test_mapping(self):
        assert target_fund_counts({"A": 0.2, "B": 0.0}) == {"A": 50, "B": 0}

    @given(st.integers(1, 250))
    def test_multiples_of_four_bp(self, n):
        assert target_fund_count(n / 250) == n


class TestInitial:
    def test_uniform(self):
        w = initial_equal_weights({"A": 1.0}, {"A": 4}, {"A": ["F1", "F2", "F3", "F4"]})
        assert w == {f"F{i}": 0.25 for i in range(1, 5)}

    def test_forty_bp(self):
        funds = [f"F{i}" for i in range(50)]
        w = initial_equal_weights({"A": 0.2, "B": 0.8}, {"A": 50, "B": 1}, {"A": funds, "B": ["G"]})
        assert w["F0"] == pytest.approx(0.004)

    def test_two_strategies(self):
        w = initial_equal_weights({"A": 0.6, "B": 0.4}, {"A": 2, "B": 2}, {"A": ["a1", "a2"], "B": ["b1", "b2"]})
        assert w == {"a1": pytest.approx(0.3), "a2": pytest.approx(0.3), "b1": pytest.approx(0.2), "b2": pytest.approx(0.2)}

    def test_renormalized_when_targets_capped(self):
        w = initial_equal_weights({"A": 0.3, "B": 0.2}, {"A": 1, "B": 1}, {"A": ["a"], "B": ["b"]})
        assert w == {"a": pytest.approx(0.6), "b": pytest.approx(0.4)}

    def test_no_funds(self):
        with pytest.raises(NoEligibleFundsError):
            initial_equal_weights({"A": 0.5, "B": 0.5}, {"A": 0, "B": 1}, {"B": ["b"]})
