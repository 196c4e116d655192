"""Acceptance criteria, one test each.

Every test records a single ``[PASS]``/``[FAIL]`` line, printed in the
pytest terminal summary. ``python tests/test_acceptance.py`` runs the same
checks without pytest.
"""

import json
import random
import sys
import time
from dataclasses import replace
from decimal import Decimal
from pathlib import Path

import numpy as np

from lsd_cascade.amm import (
    A_PRECISION,
    FORK_RESERVE_ETH,
    FORK_RESERVE_STETH,
    MAX_ITERATIONS,
    REFERENCE_DUMP_STETH,
    Direction,
    PoolState,
    calibrate_amplification,
    exchange,
    get_dy,
    post_dump_rate,
    solve_d,
    solve_y,
)
from lsd_cascade.analytics import (
    AaveRiskParams,
    LoopPolicy,
    MarketMode,
    PriceFrame,
    build_schedule,
    build_schedule_generalized,
    health_factor,
    implied_market_price,
    max_price_drop,
)
from lsd_cascade.detect import (
    Amount,
    EventRecord,
    Strategy,
    build_report,
    detect_direct,
    detect_indirect,
    group_by_address,
    parse_events,
)
from lsd_cascade.sim import Cohort, init_scenario, load_scenario, resolve_scenario, rounds_csv, run_simulation

DATA = Path(__file__).parent / "data"


def criterion(number: int, title: str):
    def wrap(check):
        def test(acceptance_log):
            start = time.perf_counter()
            try:
                ok, detail = check()
            except Exception as exc:  # a crash is a failed criterion, reported like the rest
                ok, detail = False, f"error {exc!r}"
            elapsed = time.perf_counter() - start
            line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail} ({elapsed:.2f} s)"
            acceptance_log[number] = line
            print(line)
            assert ok, line

        test.__name__ = check.__name__
        return test

    return wrap


def timed(fn, repeat: int = 1):
    start = time.perf_counter()
    for _ in range(repeat):
        out = fn()
    return out, (time.perf_counter() - start) / repeat


# 1 --------------------------------------------------------------------------


@criterion(1, "multiplier limit")
def test_criterion_1_multiplier_limit():
    params = AaveRiskParams(0.69, 0.81)
    sched, per_call = timed(lambda: build_schedule(1.0, 50, params, PriceFrame()), repeat=1000)
    err = abs(sched.multiplier - 1 / 0.31)
    ok = err < 1e-6 and per_call < 1e-3
    return ok, f"LevM(n=50)={sched.multiplier:.9f}, |err|={err:.1e}, {per_call * 1e6:.1f} us/call"


# 2 --------------------------------------------------------------------------


@criterion(2, "case-study multipliers")
def test_criterion_2_case_studies():
    direct = build_schedule(5000, 9, AaveRiskParams(0.70, 0.75), PriceFrame()).multiplier
    params = AaveRiskParams(0.72, 0.83)
    price = implied_market_price(3.43, 8, params)
    prices = PriceFrame(p_secondary_t0=price, market_mode=MarketMode.INDIRECT)
    indirect = build_schedule(766, 8, params, prices).multiplier
    ok = abs(direct / 3.23 - 1) <= 0.01 and 0.97 <= price <= 1.0 and abs(indirect / 3.43 - 1) <= 0.02
    return ok, f"direct {direct:.4f} vs 3.23; indirect {indirect:.4f} vs 3.43 at fitted p2nd={price:.6f}"


# 3 --------------------------------------------------------------------------


@criterion(3, "HF boundary")
def test_criterion_3_hf_boundary():
    params = AaveRiskParams(0.69, 0.81)
    drop = max_price_drop(params)
    prices = PriceFrame(p_aave_tc=1.0 + drop)
    hf = health_factor(build_schedule(100, 5, params, prices), params, prices)
    ok = abs(drop - (-12 / 81)) < 1e-12 and abs(hf - 1) <= 1e-12
    return ok, f"max drop {drop:.9f}, HF at drop {hf:.15f}"


# 4 --------------------------------------------------------------------------


@criterion(4, "pool anchor")
def test_criterion_4_pool_anchor():
    def run():
        seed = PoolState(FORK_RESERVE_ETH, FORK_RESERVE_STETH, Decimal(1))
        cal = calibrate_amplification(0.9052, seed, REFERENCE_DUMP_STETH)
        rate = post_dump_rate(replace(seed, amplification=cal.amplification), REFERENCE_DUMP_STETH)
        return cal, rate

    (cal, rate), elapsed = timed(run)
    ok = abs(rate - 0.9052) <= 0.005 and elapsed < 1.0
    return ok, f"A={cal.amplification}, post-dump probe rate {rate:.6f}, {elapsed * 1e3:.1f} ms"


# 5 --------------------------------------------------------------------------


@criterion(5, "AMM fuzz (10,000 cases)")
def test_criterion_5_amm_fuzz():
    rng = np.random.default_rng(20230617)
    start = time.perf_counter()
    worst_iters = 0
    failures = []
    for case in range(10_000):
        x = int(10 ** rng.uniform(18, 28))
        y = int(x * 10 ** rng.uniform(-1, 1))
        amp = int(rng.integers(A_PRECISION, 5000 * A_PRECISION + 1))
        fee = Decimal(int(rng.integers(0, 10**8 + 1))) / Decimal(10**10)
        pool = PoolState(x, y, Decimal(amp) / A_PRECISION, fee)
        direction = Direction.STETH_TO_ETH if case % 2 else Direction.ETH_TO_STETH
        i, _ = direction.indices
        dx = max(1, int(pool.balances[i] * 10 ** rng.uniform(-6, -0.3)))

        d, iters_d = solve_d(pool.balances, amp)
        _, iters_y = solve_y(pool.balances[i] + dx, amp, d)
        worst_iters = max(worst_iters, iters_d, iters_y)

        quote = get_dy(pool, direction, dx)
        # fee retention: output plus fee equals the fee-free output, and the fee stays in the pool
        free = get_dy(replace(pool, fee=Decimal(0)), direction, dx).amount_out
        retained = (
            quote.amount_out + quote.fee_amount == free
            and quote.fee_amount == free * pool.fee_precise // 10**10
            and sum(quote.post_state.balances) == sum(pool.balances) + dx - quote.amount_out
        )
        back, _ = exchange(quote.post_state, direction.reverse, quote.amount_out)
        k = int(rng.integers(2, 101))
        dk, _ = solve_d((k * x, k * y), amp)
        homogeneous = abs(dk - k * d) <= 2 * k + 2
        if not (retained and back <= dx and homogeneous):
            failures.append(case)
    elapsed = time.perf_counter() - start
    ok = not failures and worst_iters <= MAX_ITERATIONS and elapsed < 30
    return ok, f"{len(failures)} failing cases, max Newton iterations {worst_iters}, {elapsed:.1f} s"


# 6 --------------------------------------------------------------------------


def _perturb(events, rng, scale):
    def jiggle(a):
        if a is None:
            return None
        factor = Decimal(1) + Decimal(repr(rng.uniform(-scale, scale)))
        return Amount(a.asset, (a.value * factor).quantize(Decimal("1e-18")))

    return [EventRecord(e.address, e.kind, e.block, e.log_index, jiggle(e.amount_in), jiggle(e.amount_out)) for e in events]


@criterion(6, "detection golden corpus")
def test_criterion_6_detection():
    start = time.perf_counter()
    records = parse_events(DATA / "golden_events.jsonl").records
    labels = json.loads((DATA / "golden_labels.json").read_text())
    got = {row["address"]: row["strategy"] for row in build_report(records)}
    exact = got == labels

    rng = random.Random(6)
    groups = list(group_by_address(records).values())
    violations = 0
    for _ in range(1000):
        events = _perturb(rng.choice(groups), rng, 0.01)
        t1, t2 = sorted(Decimal(rng.randint(0, 500)) / 10_000 for _ in range(2))
        for detect in (detect_direct, detect_indirect):
            if detect(events, tolerance=t1).strategy is not Strategy.NONE and detect(events, tolerance=t2).strategy is Strategy.NONE:
                violations += 1
    elapsed = time.perf_counter() - start
    ok = exact and violations == 0 and elapsed < 5
    return ok, f"labels {'exact' if exact else 'MISMATCH'} on {len(labels)} addresses, {violations} monotonicity violations in 1000 perturbations"


# 7 --------------------------------------------------------------------------


def _bundled(name):
    return load_scenario(resolve_scenario(name))


@criterion(7, "simulation directionality")
def test_criterion_7_directionality():
    start = time.perf_counter()
    sq1 = run_simulation(_bundled("sq1"))
    n_lev = sum(p.cohort is Cohort.LEVERAGE for p in _bundled("sq1").seed_positions())
    share = sq1.liquidated(Cohort.LEVERAGE) / n_lev
    a = share >= 0.99 and sq1.terminal_price < 0.1 * sq1.initial_price

    with_lev = run_simulation(_bundled("sq2_pair/with_leverage"))
    first = run_simulation(_bundled("sq2_pair/first_loop_only"))
    ratio = with_lev.total_liquidated_eth / max(first.total_liquidated_eth, 1)
    b = ratio >= 5

    alone = run_simulation(_bundled("sq3_pair/ordinary_only"))
    both = run_simulation(_bundled("sq3_pair/with_leverage"))
    c = both.liquidated(Cohort.ORDINARY) > alone.liquidated(Cohort.ORDINARY)

    plain = run_simulation(_bundled("sq4_pair/no_deleverage"))
    delev_cfg = _bundled("sq4_pair/deleverage")
    delev = run_simulation(delev_cfg)
    engine = init_scenario(delev_cfg)
    engine.deleverage_cohort()
    engine.refresh()
    round1_targets = sum(p.cohort is Cohort.LEVERAGE for p in engine.liquidatable())
    d = delev.n_rounds < plain.n_rounds and round1_targets == 0 and delev.rounds[1].liquidated_count_leverage == 0

    elapsed = time.perf_counter() - start
    ok = a and b and c and d and elapsed < 10
    detail = (
        f"(a) {share:.1%} liquidated, price {sq1.initial_price:.4f}->{sq1.terminal_price:.4f} {'ok' if a else 'FAIL'}; "
        f"(b) volume ratio {ratio:.1f}x {'ok' if b else 'FAIL'}; "
        f"(c) ordinary {alone.liquidated(Cohort.ORDINARY)} vs {both.liquidated(Cohort.ORDINARY)} {'ok' if c else 'FAIL'}; "
        f"(d) rounds {plain.n_rounds} vs {delev.n_rounds}, round-1 leverage targets {round1_targets} {'ok' if d else 'FAIL'}"
    )
    return ok, detail


# 8 --------------------------------------------------------------------------


@criterion(8, "engine invariants")
def test_criterion_8_engine_invariants():
    start = time.perf_counter()
    problems = []
    for name in ("sq3_pair/with_leverage", "sq4_pair/deleverage"):
        config = _bundled(name)
        engine = init_scenario(config)
        reports = [engine.deleverage_cohort() if config.deleverage_at_round0 else engine.setup_report()]
        liquidated = set()
        while not engine.terminated:
            reports.append(engine.run_round())
            for p in engine.positions:
                if p.liquidated:
                    if p.collateral_steth or p.debt_eth:
                        problems.append(f"{name}: {p.id} liquidated with balances")
                    liquidated.add(p.id)
            if sum(p.liquidated for p in engine.positions) != len(liquidated):
                problems.append(f"{name}: a liquidated position came back")
        prices = [r.steth_price for r in reports]
        if any(b > a for a, b in zip(prices, prices[1:])):
            problems.append(f"{name}: price rose")
        for r in reports:
            if (
                r.pool_after.reserve_steth != r.pool_before.reserve_steth + r.steth_sold
                or r.pool_after.reserve_eth != r.pool_before.reserve_eth - r.eth_bought
            ):
                problems.append(f"{name}: pool not conserved in round {r.round}")
        if rounds_csv(run_simulation(config)) != rounds_csv(run_simulation(_bundled(name))):
            problems.append(f"{name}: CSV differs between runs")
    elapsed = time.perf_counter() - start
    ok = not problems and elapsed < 10
    return ok, "; ".join(problems) if problems else "monotone price, exact conservation, terminal liquidations, identical CSV"


# 9 --------------------------------------------------------------------------


@criterion(9, "generalized-form equivalence")
def test_criterion_9_generalized():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(1000):
        s = float(10 ** rng.uniform(-3, 6))
        n = int(rng.integers(0, 60))
        l = float(rng.uniform(0.0, 0.95))
        mode = MarketMode.INDIRECT if rng.random() < 0.5 else MarketMode.DIRECT
        prices = PriceFrame(p_secondary_t0=float(rng.uniform(0.95, 1.0)), p_aave_t0=float(rng.uniform(0.95, 1.0)), market_mode=mode)
        params = AaveRiskParams(l, max(l, 0.96))
        a = build_schedule(s, n, params, prices)
        b = build_schedule_generalized(s, LoopPolicy.full(n), params, prices)
        for x, y in ((a.total_invested, b.total_invested), (a.total_collateral, b.total_collateral), (a.total_debt, b.total_debt)):
            if x or y:
                worst = max(worst, abs(x - y) / max(abs(x), abs(y)))
    return worst <= 1e-12, f"max relative difference {worst:.2e} over 1000 draws"


if __name__ == "__main__":
    log: dict = {}
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn(log)
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
