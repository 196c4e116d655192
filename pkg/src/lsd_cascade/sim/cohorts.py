"""Synthetic position cohorts shaped after the observed leverage-staking population.

Per-position on-chain data is not available, so cohorts are drawn from a
seeded generator:

* loop counts follow the observed mix: most direct positions run a single
  loop, a dozen run more than eight; indirect positions are almost all
  single-loop;
* each position is opened under one of the historical Aave parameter sets
  and keeps that configuration's LTV/LT;
* leverage positions are built with the loop schedule; the first borrow
  keeps a buffer and later loops borrow closer to the limit;
* ordinary positions hold one deposit and one borrow at a spread of HFs.

Position sizes are scaled so that the cohort totals match
``CohortSpec.leverage_invested_eth`` and ``ordinary_collateral_steth``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..analytics import (
    AaveRiskParams,
    LoopPolicy,
    MarketMode,
    PriceFrame,
    build_schedule_generalized,
    load_param_schedule,
)
from ..fixedpoint import float_to_wei
from .scenario import Cohort, CohortSpec, SimPosition

# Share of addresses by loop count (1..10).
DIRECT_LOOP_SHARES = np.array([0.5535, 0.12, 0.08, 0.06, 0.045, 0.035, 0.035, 0.025, 0.025, 0.0215])
INDIRECT_LOOP_SHARES = np.array([0.8278, 0.06, 0.035, 0.02, 0.015, 0.01, 0.01, 0.0111, 0.0056, 0.0055])

# Weight of each historical parameter set among position openings, in schedule order.
REGIME_WEIGHTS = np.array([0.10, 0.30, 0.15, 0.15, 0.10, 0.10, 0.10])

FIRST_UTIL_LOW, FIRST_UTIL_HIGH = 0.60, 0.97
NEAR_LIMIT_SHARE = 0.6



def _quota(shares: np.ndarray, total: int) -> np.ndarray:
    """Integer counts per bucket summing to ``total`` (largest remainder)."""
    raw = shares / shares.sum() * total
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[: total - counts.sum()]] += 1
    return counts


def _loop_counts(shares: np.ndarray, total: int, rng: np.random.Generator) -> np.ndarray:
    counts = _quota(shares, total)
    loops = np.repeat(np.arange(1, len(shares) + 1), counts)
    return rng.permutation(loops)


def _leverage_positions(spec: CohortSpec, rng: np.random.Generator, regimes: list[AaveRiskParams]) -> list[SimPosition]:
    n_direct, n_indirect = spec.n_direct, spec.n_indirect
    total = n_direct + n_indirect
    loops = np.concatenate(
        [_loop_counts(DIRECT_LOOP_SHARES, n_direct, rng), _loop_counts(INDIRECT_LOOP_SHARES, n_indirect, rng)]
    )
    modes = [MarketMode.DIRECT] * n_direct + [MarketMode.INDIRECT] * n_indirect
    regime_idx = rng.choice(len(regimes), size=total, p=REGIME_WEIGHTS / REGIME_WEIGHTS.sum())
    # The first borrow keeps a buffer; later loops push towards the limit,
    # most of them close to it and a minority with a wide margin.
    first_util = rng.uniform(FIRST_UTIL_LOW, FIRST_UTIL_HIGH, total)
    near_limit = rng.random(total) < NEAR_LIMIT_SHARE
    utilization = np.where(near_limit, rng.uniform(0.93, 1.0, total), rng.uniform(0.45, 0.93, total))
    p_secondary = rng.uniform(0.97, 1.0, total)
    # Heavier loopers commit more capital.
    principal = rng.lognormal(mean=0.0, sigma=1.0, size=total) * (1.0 + 0.6 * (loops - 1))

    def policy(n: int, b1: float, b: float) -> LoopPolicy:
        return LoopPolicy([1.0] * n, [b1] + [b] * (n - 1), [1.0] * (n + 1), n)

    full_invested = 0.0
    chosen = []
    for i in range(total):
        n = int(loops[i])
        b1, b = float(first_util[i]), float(utilization[i])
        prices = PriceFrame(p_secondary_t0=float(p_secondary[i]), market_mode=modes[i])
        risk = regimes[regime_idx[i]]
        full = build_schedule_generalized(float(principal[i]), policy(n, b1, b), risk, prices)
        full_invested += full.total_invested
        if spec.first_loop_only:
            # the position as it stood after its first borrow
            chosen.append((build_schedule_generalized(float(principal[i]), policy(1, b1, b), risk, prices), risk, 1))
        else:
            chosen.append((full, risk, n))

    # both variants share one scale so that principals line up
    scale = float(spec.leverage_invested_eth) / full_invested
    out = []
    for i, (sched, risk, n) in enumerate(chosen):
        prefix = "D" if modes[i] is MarketMode.DIRECT else "I"
        out.append(
            SimPosition(
                id=f"L{prefix}{i:04d}",
                cohort=Cohort.LEVERAGE,
                collateral_steth=float_to_wei(sched.total_collateral * scale),
                debt_eth=float_to_wei(sched.total_debt * scale),
                risk=AaveRiskParams(risk.ltv, risk.liquidation_threshold),
                n_loops=n,
            )
        )
    return out


def _ordinary_positions(spec: CohortSpec, rng: np.random.Generator, regimes: list[AaveRiskParams]) -> list[SimPosition]:
    n = spec.n_ordinary
    regime_idx = rng.choice(len(regimes), size=n, p=REGIME_WEIGHTS / REGIME_WEIGHTS.sum())
    hf_at_par = 1.0 + rng.gamma(shape=1.6, scale=0.35, size=n)
    collateral = rng.lognormal(mean=0.0, sigma=1.2, size=n)
    collateral *= float(spec.ordinary_collateral_steth) / collateral.sum()
    out = []
    for i in range(n):
        risk = regimes[regime_idx[i]]
        debt = collateral[i] * risk.liquidation_threshold / hf_at_par[i]
        out.append(
            SimPosition(
                id=f"O{i:04d}",
                cohort=Cohort.ORDINARY,
                collateral_steth=float_to_wei(float(collateral[i])),
                debt_eth=float_to_wei(float(debt)),
                risk=AaveRiskParams(risk.ltv, risk.liquidation_threshold),
            )
        )
    return out


@lru_cache(maxsize=16)
def _generate(spec: CohortSpec) -> tuple[dict, ...]:
    regimes = load_param_schedule()
    lev_rng = np.random.default_rng(spec.seed)
    ord_rng = np.random.default_rng(spec.seed + 1)
    positions = _leverage_positions(spec, lev_rng, regimes) + _ordinary_positions(spec, ord_rng, regimes)
    return tuple(p.to_json() for p in positions)


def generate_cohort(spec: CohortSpec) -> list[SimPosition]:
    """Deterministic leverage + ordinary cohort for ``spec``; fresh objects each call."""
    return [SimPosition.from_json(obj) for obj in _generate(spec)]
