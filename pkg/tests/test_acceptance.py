"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the lines are printed even
without ``-s``. Each test also asserts, so a failing criterion fails the run.
"""

import itertools
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import make_fund
from oracles import max_min_fill, min_max_cut
from hfindex.allocation import (
    ALLOCATION_CEILING,
    GLOBAL_FUND_CAP,
    STRATEGY_CAP_FLOOR,
    FundBounds,
    allocate_within_strategy,
    redeem_within_strategy,
)
from hfindex.backtest import RunConfig, run_from_config
from hfindex.cli import main
from hfindex.core import AdjustmentEntry, FeeSchedule, MonthId, NotionalSchedule, Reason, monthly_fee, usd
from hfindex.data_io import generate_synthetic_universe
from hfindex.projection import EngineState, apply_month_transition
from hfindex.returns import amount_decomposition, compute_month, end_of_month_weights, index_return
from hfindex.strategy import target_fund_counts

FEE = 0.0095 / 12
BP = 1e-4


@pytest.fixture
def verdict(capsys):
    def say(n, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {title} ({detail})")
        assert ok, detail

    return say


def test_fee_constant(verdict):
    full = monthly_fee(FeeSchedule())
    half = monthly_fee(FeeSchedule(days_into_month=15, total_days_in_month=30), full_month=False)
    days = [monthly_fee(FeeSchedule(days_into_month=d, total_days_in_month=31), full_month=False) for d in range(32)]
    linear = all(abs(days[d] - d / 31 * full) <= 1e-15 for d in range(32))
    ok = abs(full - 0.0095 / 12) <= 1e-12 and abs(full * 1e4 - 7.917) < 5e-4 and abs(half - full / 2) <= 1e-15 and linear
    verdict(1, "monthly fee constant", ok, f"fee={full * 1e4:.4f}bp, accrual linear in days={linear}")


def _draws(n_draws=10_000, seed=2024):
    rng = np.random.default_rng(seed)
    for _ in range(n_draws):
        n = int(rng.integers(2, 201))
        raw = rng.random(n) + 1e-3
        w = raw / raw.sum()
        r = rng.uniform(-0.3, 0.3, n)
        yield {f"F{i}": float(x) for i, x in enumerate(w)}, {f"F{i}": float(x) for i, x in enumerate(r)}


@pytest.fixture(scope="module")
def draws():
    return list(_draws())


def test_normalization_suite(verdict, draws):
    t0 = time.perf_counter()
    worst_sum = worst_id = 0.0
    for w, r in draws:
        kappa = index_return(w, r, FEE)
        end = end_of_month_weights(w, r, kappa, FEE)
        worst_sum = max(worst_sum, abs(math.fsum(end.values()) - 1.0))
        for f in w:
            worst_id = max(worst_id, abs((1 + kappa + FEE) * end[f] - (1 + r[f]) * w[f]))
    dt = time.perf_counter() - t0
    ok = worst_sum <= 1e-9 and worst_id <= 1e-12 and dt < 5
    verdict(2, "end weights normalized", ok, f"max|sum-1|={worst_sum:.1e}, max identity err={worst_id:.1e}, {dt:.2f}s")


def test_conservation_suite(verdict, draws):
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(7)
    for w, r in draws:
        level = float(rng.uniform(1.0, 1e6))
        kappa = index_return(w, r, FEE)
        d = amount_decomposition(level, w, r, kappa, FEE)
        errs = (
            abs(math.fsum(d.amounts.values()) - level),
            abs(math.fsum(d.pre_fee_amounts.values()) - d.pre_fee_level),
            abs(d.pre_fee_level - (1 + kappa + FEE) * level),
        )
        worst = max(worst, max(errs) / level)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and dt < 5
    verdict(3, "amount conservation", ok, f"max relative error={worst:.1e}, {dt:.2f}s")


# -- criterion 4 ---------------------------------------------------------------

GRID = [k * 5 * BP for k in range(21)]  # 0..100bp in 5bp steps


def _check_alloc(ws, caps, amount):
    funds = [f"F{i}" for i in range(len(ws))]
    cur = dict(zip(funds, ws))
    bounds = {f: FundBounds(f, c) for f, c in zip(funds, caps)}
    res = allocate_within_strategy(cur, amount, bounds)
    hi = [max(w, min(c, ALLOCATION_CEILING)) for w, c in zip(ws, caps)]
    cap_amount = min(amount, math.fsum(h - w for h, w in zip(hi, ws)))
    want = max_min_fill(ws, hi, cap_amount)
    got = [w + res.deltas.get(f, 0.0) for f, w in zip(funds, ws)]
    err = max(abs(a - b) for a, b in zip(got, want))
    # a fund may only end above min(cap, 1%, 75bp) if it started there and received nothing
    feasible = all(
        g <= min(c, GLOBAL_FUND_CAP, ALLOCATION_CEILING) + 1e-12 or g == w
        for g, w, c in zip(got, ws, caps)
    )
    conserved = abs(math.fsum(res.deltas.values()) + res.unplaced - amount) <= 1e-12
    return err, feasible and conserved


def _check_redeem(ws, floors, amount, reason):
    funds = [f"F{i}" for i in range(len(ws))]
    cur = dict(zip(funds, ws))
    bounds = {f: FundBounds(f, GLOBAL_FUND_CAP, fl) for f, fl in zip(funds, floors)}
    res = redeem_within_strategy(cur, amount, bounds, reason=reason)
    stops = [min(w, max(fl, STRATEGY_CAP_FLOOR) if reason is Reason.STRATEGY_CAP else fl) for w, fl in zip(ws, floors)]
    take = min(amount, math.fsum(w - s for w, s in zip(ws, stops)))
    want = min_max_cut(ws, stops, take)
    got = [w + res.deltas.get(f, 0.0) for f, w in zip(funds, ws)]
    err = max(abs(a - b) for a, b in zip(got, want))
    feasible = all(g >= s - 1e-12 for g, s in zip(got, stops))
    conserved = abs(math.fsum(res.deltas.values()) + res.unplaced + amount) <= 1e-12
    return err, feasible and conserved


def _amounts(capacity):
    top = int(round(capacity / BP)) + 2  # run slightly past capacity to exercise the unplaced branch
    return [k * BP for k in range(1, top + 1)]


def test_allocation_oracle(verdict):
    t0 = time.perf_counter()
    worst, feasible, cases = 0.0, True, 0
    # every instance with one or two funds on the grid
    for n in (1, 2):
        for ws in itertools.product(GRID, repeat=n):
            caps = [GLOBAL_FUND_CAP] * n
            cap_room = math.fsum(max(0.0, min(c, ALLOCATION_CEILING) - w) for w, c in zip(ws, caps))
            for a in _amounts(cap_room):
                err, ok = _check_alloc(list(ws), caps, a)
                worst, feasible, cases = max(worst, err), feasible and ok, cases + 1
            for reason in (Reason.OUTFLOW, Reason.STRATEGY_CAP):
                for a in _amounts(sum(ws)):
                    err, ok = _check_redeem(list(ws), [0.0] * n, a, reason)
                    worst, feasible, cases = max(worst, err), feasible and ok, cases + 1
    # seeded sample of three to six funds with mixed caps and floors
    rng = np.random.default_rng(99)
    for _ in range(1200):
        n = int(rng.integers(3, 7))
        ws = [GRID[i] for i in rng.integers(0, 21, n)]
        caps = [float(c) for c in rng.choice([GLOBAL_FUND_CAP, 0.0060, 0.0030], n)]
        floors = [float(f) for f in rng.choice([0.0, 0.0010, 0.0030], n)]
        cap_room = math.fsum(max(0.0, min(c, ALLOCATION_CEILING) - w) for w, c in zip(ws, caps))
        a = int(rng.integers(1, max(2, int(round(cap_room / BP)) + 3))) * BP
        err, ok = _check_alloc(ws, caps, a)
        worst, feasible, cases = max(worst, err), feasible and ok, cases + 1
        reason = Reason.STRATEGY_CAP if rng.random() < 0.5 else Reason.OUTFLOW
        a = int(rng.integers(1, max(2, int(round(sum(ws) / BP)) + 3))) * BP
        err, ok = _check_redeem(ws, floors, a, reason)
        worst, feasible, cases = max(worst, err), feasible and ok, cases + 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and feasible and dt < 60
    verdict(4, "water-fill matches brute force", ok, f"{cases} cases, max err={worst:.1e}, bounds held={feasible}, {dt:.1f}s")


# -- criterion 5 ---------------------------------------------------------------


def test_flow_gap_narrative(verdict):
    jan, feb, mar = MonthId(2024, 1), MonthId(2024, 2), MonthId(2024, 3)
    months = [jan, feb, mar, MonthId(2024, 4)]
    funds = {f: make_fund(f, "S1", months, ret=0.0) for f in ("A", "B")}
    book = {jan: usd(100e6), feb: usd(95e6), mar: usd(95e6), months[3]: usd(95e6)}
    notionals = NotionalSchedule(book, book, {})
    ledger = compute_month(jan, 1000.0, {"A": 0.5, "B": 0.5}, {"A": 0.0, "B": 0.0}, FEE)
    state = EngineState(funds, {"S1": 1.0}, notionals, ledgers={jan: ledger})
    entry = AdjustmentEntry("B", jan, feb, -usd(5e6) / usd(95e6), usd(95e6), Reason.OUTFLOW)
    state = apply_month_transition(replace(state, schedule=(entry,)), jan, executions={"B": -usd(4.9e6)})
    state = apply_month_transition(state, feb)
    state = apply_month_transition(state, mar)
    gap = state.ledgers[feb].flow_gap / 100
    gammas = {m: state.ledgers[m].normalization_factor for m in sorted(state.ledgers)}
    off = [m for m, g in gammas.items() if g != 1.0]
    client_flow = (book[jan] - book[feb]) / 100
    ok = abs(gap + 0.1e6) < 0.01 and off == [feb] and client_flow == 5e6 and entry.amount == -usd(5e6)
    verdict(5, "short redemption flow gap", ok,
            f"gap=${gap:,.2f}, gamma(Feb)={gammas[feb]:.6f}, months with gamma!=1: {[str(m) for m in off]}")


# -- criterion 6 ---------------------------------------------------------------


def test_strategy_cap_drift(verdict, tmp_path):
    t0 = time.perf_counter()
    p = generate_synthetic_universe(7, 300, 24, out_dir=tmp_path, drift_strategy="S3", drift_return=0.10)
    state = run_from_config(RunConfig(p.universe, p.nav, p.flows, p.limits, p.start, p.end))
    dt = time.perf_counter() - t0
    cover: dict = {}
    for d in state.diagnostics:
        if d.kind == "unplaced_redemption" and d.as_of is not None and d.target == d.as_of + 1:
            cover[d.target, d.strategy] = cover.get((d.target, d.strategy), 0.0) + abs(d.amount)
    breaches, uncovered = 0, []
    for m in sorted(state.ledgers):
        if m == p.start:
            continue
        for s, t in state.targets.get(m, {}).items():
            excess = t.sw - 1.2 * t.tsw
            if t.sw > 0 and excess > 1e-9:
                breaches += 1
                if cover.get((m, s), 0.0) < excess - 1e-9:
                    uncovered.append(f"{m}/{s}")
    ok = not uncovered and dt < 10
    verdict(6, "strategy cap holds or is logged", ok,
            f"{breaches} month-strategy breaches, {len(uncovered)} uncovered, {dt:.1f}s")


# -- criterion 7 ---------------------------------------------------------------


def test_bootstrap_determinism(verdict, tmp_path):
    p = generate_synthetic_universe(42, 500, 60, out_dir=tmp_path / "data")
    args = ["--universe", str(p.universe), "--nav", str(p.nav), "--flows", str(p.flows),
            "--limits", str(p.limits), "--start", str(p.start), "--end", str(p.end), "--seed", "42"]
    t0 = time.perf_counter()
    codes = [main(["run", *args, "--output-dir", str(tmp_path / k)]) for k in ("a", "b")]
    dt = time.perf_counter() - t0
    names = sorted(x.name for x in (tmp_path / "a").iterdir())
    same = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    ok = codes == [0, 0] and same and len(names) == 7 and dt < 10
    verdict(7, "byte-identical reruns", ok, f"{len(names)} files identical={same}, two runs {dt:.1f}s")


# -- criterion 8 ---------------------------------------------------------------


def test_steady_state(verdict, tmp_path):
    p = generate_synthetic_universe(8, 300, 12, out_dir=tmp_path, steady=True, limit=1.0)
    state = run_from_config(RunConfig(p.universe, p.nav, p.flows, p.limits, p.start, p.end))
    months = sorted(state.ledgers)
    first = state.ledgers[months[0]].begin_weights
    drift = max(
        abs(state.ledgers[m].begin_weights.get(f, 0.0) - w) for m in months for f, w in first.items()
    )
    extra = {f for m in months for f in state.ledgers[m].begin_weights} - set(first)
    gamma = max(abs(state.ledgers[m].normalization_factor - 1.0) for m in months)
    kappa = max(abs(state.ledgers[m].index_return - (0.005 - FEE)) for m in months)
    ok = drift <= 1e-12 and not extra and gamma <= 1e-12 and kappa <= 1e-12 and not state.schedule
    verdict(8, "steady state", ok, f"weight drift={drift:.1e}, |gamma-1|={gamma:.1e}, |kappa-(r-fee)|={kappa:.1e}")


def test_count_rule(verdict):
    got = target_fund_counts({"A": 0.2, "B": 0.004, "C": 0.1})
    ok = got == {"A": 50, "B": 1, "C": 25}
    verdict(9, "target fund count", ok, f"0.2 -> {got['A']}, 0.1 -> {got['C']}, 0.004 -> {got['B']}")
