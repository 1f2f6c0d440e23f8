import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import BP, make_fund
from hfindex.allocation import (
    FundBounds,
    allocate_within_strategy,
    distribute_allocation_across_strategies,
    distribute_redemption_across_strategies,
    effective_fund_bounds,
    redeem_within_strategy,
    select_new_funds,
    spill_across_strategies,
    water_level,
)
from hfindex.core import MonthId, Reason, usd
from oracles import brute_level, max_min_fill, min_max_cut

M = MonthId(2024, 1)


def bp(d):
    return {k: round(v / BP, 9) for k, v in d.items()}


def open_bounds(funds, cap=1.0, floor=0.0):
    return {f: FundBounds(f, cap, floor) for f in funds}


class TestWaterLevel:
    def test_simple(self):
        assert water_level([0.0, 0.0], [1.0, 1.0], 1.0) == pytest.approx(0.5)

    def test_infinite_tops(self):
        assert water_level([1.0, 3.0], [math.inf, math.inf], 4.0) == pytest.approx(4.0)

    def test_saturates(self):
        assert water_level([0.0], [1.0], 5.0) == 1.0

    @given(
        st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=12),
        st.floats(0.0, 1.0),
    )
    def test_against_bisection(self, pairs, frac):
        lo = [min(a, b) for a, b in pairs]
        hi = [max(a, b) for a, b in pairs]
        cap = sum(h - l for l, h in zip(lo, hi))
        amount = frac * cap
        x = water_level(lo, hi, amount)
        filled = sum(min(max(x, a), b) - a for a, b in zip(lo, hi))
        assert filled == pytest.approx(amount, abs=1e-12)
        if 0 < amount < cap:
            assert filled == pytest.approx(sum(min(max(brute_level(lo, hi, amount), a), b) - a for a, b in zip(lo, hi)), abs=1e-9)


class TestBounds:
    def test_unbounded_exposure(self):
        b = effective_fund_bounds(make_fund("F1"), 0, usd(100e6))
        assert b.cap_weight == 0.01

    def test_exposure_cap(self):
        f = make_fund("F1", exposure_cap_usd=usd(2e6))
        b = effective_fund_bounds(f, usd(1.5e6), usd(100e6))
        assert b.cap_weight == pytest.approx(0.005)

    def test_cap_beats_floor(self):
        f = make_fund("F1", exposure_cap_usd=usd(0.4e6), min_investment_weight=0.006)
        b = effective_fund_bounds(f, 0, usd(100e6), current_weight=0.006)
        assert b.cap_weight == pytest.approx(0.004)
        assert b.floor_weight == pytest.approx(0.004)
        assert b.redemption_forced

    def test_closed_fund_frozen(self):
        f = make_fund("F1", closed_to_new_investment=True)
        b = effective_fund_bounds(f, 0, usd(100e6), current_weight=0.003)
        assert b.cap_weight == 0.003 and b.floor_weight == 0.003
        assert not b.available_for_allocation

    def test_floor_only_when_held(self):
        f = make_fund("F1", min_investment_weight=0.002)
        assert effective_fund_bounds(f, 0, usd(100e6)).floor_weight == 0.0
        assert effective_fund_bounds(f, 0, usd(100e6), current_weight=0.004).floor_weight == 0.002

    def test_exposure_exhausted(self):
        f = make_fund("F1", exposure_cap_usd=usd(1e6))
        assert effective_fund_bounds(f, usd(2e6), usd(100e6)).cap_weight == 0.0


class TestAllocateWithin:
    def test_zero(self):
        assert allocate_within_strategy({"A": 0.003}, 0.0, open_bounds("A")).deltas == {}

    def test_fills_lowest_first(self):
        cur = {"A": 30 * BP, "B": 50 * BP, "C": 70 * BP}
        res = allocate_within_strategy(cur, 45 * BP, open_bounds(cur), ceiling=1.0)
        assert bp(res.deltas) == {"A": 32.5, "B": 12.5}
        assert res.level == pytest.approx(62.5 * BP)

    def test_ceiling_leaves_unplaced(self):
        cur = {"A": 70 * BP, "B": 72 * BP}
        res = allocate_within_strategy(cur, 20 * BP, open_bounds(cur))
        assert bp(res.deltas) == {"A": 5.0, "B": 3.0}
        assert res.unplaced == pytest.approx(12 * BP)

    def test_new_fund_starts_at_zero(self):
        res = allocate_within_strategy({"A": 0.005}, 0.005, open_bounds(["A", "N"]))
        assert res.deltas["N"] == pytest.approx(0.005)

    def test_respects_fund_cap(self):
        bounds = {"A": FundBounds("A", 0.002), "B": FundBounds("B", 0.01)}
        res = allocate_within_strategy({}, 0.01, bounds)
        assert bp(res.deltas) == {"A": 20.0, "B": 75.0}
        assert res.unplaced == pytest.approx(5 * BP)

    def test_unavailable_funds_skipped(self):
        bounds = {"A": FundBounds("A", available_for_allocation=False), "B": FundBounds("B")}
        assert set(allocate_within_strategy({}, 0.001, bounds).deltas) == {"B"}

    def test_no_funds(self):
        res = allocate_within_strategy({}, 0.001, {})
        assert res.deltas == {} and res.unplaced == 0.001

    @given(st.lists(st.integers(0, 20), min_size=1, max_size=5), st.data())
    def test_matches_max_min_oracle(self, grid, data):
        cur = {f"F{i}": g * 5 * BP for i, g in enumerate(grid)}
        hi = [max(w, 75 * BP) for w in cur.values()]
        capacity = round(sum(h - w for h, w in zip(hi, cur.values())) / BP)
        amount = data.draw(st.integers(0, capacity)) * BP
        res = allocate_within_strategy(cur, amount, open_bounds(cur))
        want = max_min_fill(list(cur.values()), hi, amount)
        got = [w + res.deltas.get(f, 0.0) for f, w in cur.items()]
        assert got == pytest.approx(want, abs=1e-9)


class TestRedeemWithin:
    def test_zero(self):
        assert redeem_within_strategy({"A": 0.003}, 0.0, open_bounds("A")).deltas == {}

    def test_cuts_largest_first(self):
        cur = {"A": 80 * BP, "B": 60 * BP, "C": 40 * BP}
        res = redeem_within_strategy(cur, 50 * BP, open_bounds(cur))
        assert bp(res.deltas) == {"A": -35.0, "B": -15.0}
        assert res.level == pytest.approx(45 * BP)

    def test_strategy_cap_floor(self):
        res = redeem_within_strategy({"A": 60 * BP}, 50 * BP, open_bounds("A"), reason=Reason.STRATEGY_CAP)
        assert bp(res.deltas) == {"A": -35.0}
        assert res.unplaced == pytest.approx(-15 * BP)

    def test_signed_totals(self):
        cur = {"A": 60 * BP, "B": 10 * BP}
        res = redeem_within_strategy(cur, 80 * BP, open_bounds(cur))
        assert res.placed + res.unplaced == pytest.approx(res.requested)
        assert res.requested == pytest.approx(-80 * BP)

    def test_min_investment_floor(self):
        cur = {"A": 60 * BP}
        res = redeem_within_strategy(cur, 50 * BP, {"A": FundBounds("A", floor_weight=20 * BP)})
        assert bp(res.deltas) == {"A": -40.0}

    def test_ineligible_ignores_floor(self):
        cur = {"A": 60 * BP}
        res = redeem_within_strategy(cur, 60 * BP, {"A": FundBounds("A", floor_weight=20 * BP)}, reason=Reason.FUND_INELIGIBLE)
        assert bp(res.deltas) == {"A": -60.0}

    def test_illiquid_fund_skipped(self):
        cur = {"A": 60 * BP, "B": 30 * BP}
        bounds = {"A": FundBounds("A", available_for_redemption=False), "B": FundBounds("B")}
        res = redeem_within_strategy(cur, 40 * BP, bounds)
        assert bp(res.deltas) == {"B": -30.0}
        assert res.unplaced == pytest.approx(-10 * BP)

    @given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), min_size=1, max_size=5), st.booleans(), st.data())
    def test_matches_min_max_oracle(self, grid, cap_reason, data):
        cur = {f"F{i}": a * 5 * BP for i, (a, _) in enumerate(grid)}
        floors = [min(w, b * 5 * BP) for w, (_, b) in zip(cur.values(), grid)]
        reason = Reason.STRATEGY_CAP if cap_reason else Reason.OUTFLOW
        stops = [min(w, max(f, 25 * BP)) if cap_reason else f for w, f in zip(cur.values(), floors)]
        capacity = round(sum(w - s for w, s in zip(cur.values(), stops)) / BP)
        amount = data.draw(st.integers(0, capacity)) * BP
        bounds = {f: FundBounds(f, floor_weight=fl) for f, fl in zip(cur, floors)}
        res = redeem_within_strategy(cur, amount, bounds, reason=reason)
        want = min_max_cut(list(cur.values()), stops, amount)
        got = [w + res.deltas.get(f, 0.0) for f, w in cur.items()]
        assert got == pytest.approx(want, abs=1e-9)


class TestAcrossStrategies:
    def test_single_recipient(self):
        res = distribute_allocation_across_strategies(0.03, {"A": 0.1}, {"A": 0.13})
        assert res.deltas == {"A": pytest.approx(0.03)}

    def test_largest_shortfall_first(self):
        res = distribute_allocation_across_strategies(0.03, {"A": 0.16, "B": 0.19}, {"A": 0.2, "B": 0.2})
        assert res.deltas == {"A": pytest.approx(0.03)}

    def test_symmetric(self):
        res = distribute_allocation_across_strategies(0.02, {"A": 0.18, "B": 0.18}, {"A": 0.2, "B": 0.2})
        assert res.deltas == {"A": pytest.approx(0.01), "B": pytest.approx(0.01)}

    def test_capacity_limits(self):
        res = distribute_allocation_across_strategies(0.03, {"A": 0.1, "B": 0.1}, {"A": 0.2, "B": 0.2}, {"A": 0.005, "B": 0.01})
        assert res.deltas == {"A": pytest.approx(0.005), "B": pytest.approx(0.01)}
        assert res.unplaced == pytest.approx(0.015)

    def test_overweight_strategies_excluded(self):
        res = distribute_allocation_across_strategies(0.01, {"A": 0.3, "B": 0.1}, {"A": 0.2, "B": 0.2})
        assert set(res.deltas) == {"B"}

    def test_redeem_largest_excess(self):
        res = distribute_redemption_across_strategies(-20 * BP, {"A": 0.203, "B": 0.201}, {"A": 0.2, "B": 0.2})
        assert bp(res.deltas) == {"A": -20.0}

    def test_redeem_symmetric(self):
        res = distribute_redemption_across_strategies(-10 * BP, {"A": 0.201, "B": 0.201}, {"A": 0.2, "B": 0.2})
        assert bp(res.deltas) == {"A": -5.0, "B": -5.0}

    def test_redeem_nothing_in_excess(self):
        res = distribute_redemption_across_strategies(-0.01, {"A": 0.1}, {"A": 0.2})
        assert res.deltas == {} and res.unplaced == -0.01

    def test_spill_signed(self):
        up = spill_across_strategies(0.01, {"A": 0.3, "B": 0.1}, {"A": 0.2, "B": 0.2}, {"A": 1.0, "B": 1.0})
        assert up.deltas == {"B": pytest.approx(0.01)}
        down = spill_across_strategies(-0.01, {"A": 0.3, "B": 0.1}, {"A": 0.2, "B": 0.2}, {"A": 1.0, "B": 1.0})
        assert down.deltas == {"A": pytest.approx(-0.01)}

    @given(st.lists(st.tuples(st.floats(0, 0.3), st.floats(0, 0.3)), min_size=1, max_size=9), st.floats(0, 0.2))
    def test_conserves_and_only_short_strategies(self, rows, arw):
        sw = {f"S{i}": a for i, (a, _) in enumerate(rows)}
        tsw = {f"S{i}": b for i, (_, b) in enumerate(rows)}
        res = distribute_allocation_across_strategies(arw, sw, tsw)
        assert all(sw[s] < tsw[s] for s in res.deltas)
        assert res.placed + res.unplaced == pytest.approx(arw, abs=1e-12)
        if any(sw[s] < tsw[s] for s in sw) and arw > 0:
            assert res.unplaced == pytest.approx(0.0, abs=1e-12)


class TestSelectNewFunds:
    def test_largest_aum_first(self):
        elig = {"F1": ("A", 900), "F2": ("A", 500), "F3": ("A", 1200)}
        assert select_new_funds("A", 2, elig) == ["F3", "F1"]

    def test_zero_shortfall(self):
        assert select_new_funds("A", 0, {"F1": ("A", 1)}) == []

    def test_exhaustion(self):
        assert select_new_funds("A", 3, {"F1": ("A", 1), "G": ("B", 9)}) == ["F1"]

    def test_members_excluded_and_ties_by_id(self):
        elig = {"F2": ("A", 5), "F1": ("A", 5), "F3": ("A", 5)}
        assert select_new_funds("A", 2, elig, members=["F1"]) == ["F2", "F3"]
