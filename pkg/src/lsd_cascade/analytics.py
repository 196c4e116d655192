"""Closed-form leverage-staking mathematics.

A leverage-staking position starts from ``principal`` ETH and runs ``n``
loops of stake (or swap) -> deposit -> borrow -> restake. Every loop scales
the amount by the same ratio ``l * p_aave / p_market``, so the invested,
collateral and debt totals are geometric series in that ratio.

All quantities here are plain floats: the formulas involve non-terminating
ratios, and the identities are checked to 1e-12 relative, well inside
double precision. Token amounts that must balance exactly live in
:mod:`lsd_cascade.amm` and :mod:`lsd_cascade.sim` as integer wei.
"""

from __future__ import annotations

import bisect
import csv
import enum
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DomainError, ValidationError

#: Health factor of a debt-free position. Serializers write it as ``"no-debt"``.
NO_DEBT = math.inf
NO_DEBT_LABEL = "no-debt"

SECONDS_PER_YEAR = 3600 * 24 * 365
DEFAULT_BLOCK_TIME = 12


class MarketMode(enum.Enum):
    DIRECT = "direct"  # stake on Lido at the primary price (1)
    INDIRECT = "indirect"  # swap on Curve at the secondary price


@dataclass(frozen=True)
class AaveRiskParams:
    """Loan-to-value and liquidation threshold of the stETH reserve."""

    ltv: float
    liquidation_threshold: float
    effective_from_block: int | None = None

    def __post_init__(self):
        l, lt = self.ltv, self.liquidation_threshold
        if not (0.0 <= l <= 1.0 and 0.0 < lt <= 1.0):
            raise ValidationError(f"ltv and liquidation threshold must lie in [0, 1], got ltv={l}, lt={lt}")
        if l > lt:
            raise ValidationError(f"ltv ({l}) must not exceed the liquidation threshold ({lt})")


@dataclass(frozen=True)
class PriceFrame:
    """stETH/ETH prices seen by the position at open time and at evaluation time."""

    p_secondary_t0: float = 1.0
    p_aave_t0: float = 1.0
    p_aave_tc: float | None = None
    market_mode: MarketMode = MarketMode.DIRECT
    p_primary_t0: float = field(default=1.0)

    def __post_init__(self):
        if self.p_primary_t0 != 1.0:
            raise ValidationError("the primary-market price is fixed at 1")
        if self.p_aave_tc is None:
            object.__setattr__(self, "p_aave_tc", self.p_aave_t0)
        for name in ("p_secondary_t0", "p_aave_t0", "p_aave_tc"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValidationError(f"{name} must be a positive finite price, got {value}")

    @property
    def p_market(self) -> float:
        if self.market_mode is MarketMode.DIRECT:
            return self.p_primary_t0
        return self.p_secondary_t0

    def loop_ratio(self, ltv: float) -> float:
        """Fraction of one loop's investment that is re-invested in the next."""
        return ltv * self.p_aave_t0 / self.p_market


@dataclass(frozen=True)
class LoopPolicy:
    """Per-loop collateral, borrow and restake fractions.

    ``collateral_fractions`` and ``borrow_fractions`` need ``n_loops``
    entries, ``restake_fractions`` one more (the first applies to the
    principal).
    """

    collateral_fractions: Sequence[float]
    borrow_fractions: Sequence[float]
    restake_fractions: Sequence[float]
    n_loops: int

    def __post_init__(self):
        if self.n_loops < 0:
            raise ValidationError("n_loops must be nonnegative")
        need = {
            "collateral_fractions": self.n_loops,
            "borrow_fractions": self.n_loops,
            "restake_fractions": self.n_loops + 1,
        }
        for name, length in need.items():
            seq = getattr(self, name)
            if len(seq) < length:
                raise ValidationError(f"{name} needs at least {length} entries, got {len(seq)}")
            for x in seq:
                if not 0.0 <= x <= 1.0:
                    raise ValidationError(f"{name} entries must lie in [0, 1], got {x}")

    @classmethod
    def full(cls, n_loops: int) -> "LoopPolicy":
        """The standard policy: supply, borrow and restake everything."""
        return cls([1.0] * n_loops, [1.0] * n_loops, [1.0] * (n_loops + 1), n_loops)


@dataclass(frozen=True)
class LeverageSchedule:
    principal: float
    n_loops: int
    total_invested: float
    total_collateral: float
    total_debt: float

    @property
    def multiplier(self) -> float:
        return self.total_invested / self.principal


@dataclass(frozen=True)
class RateSet:
    staking_apr: float
    deposit_apr: float = 0.0
    borrow_apr: float = 0.0

    def __post_init__(self):
        for name in ("staking_apr", "deposit_apr", "borrow_apr"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class AprBreakdown:
    staking_component: float
    deposit_component: float
    borrow_component: float

    @property
    def net(self) -> float:
        return self.staking_component + self.deposit_component - self.borrow_component


def _geometric_sum(ratio: float, terms: int) -> float:
    """1 + ratio + ... + ratio**(terms-1).

    Written as expm1(k*ln r)/expm1(ln r), which stays accurate as the ratio
    approaches 1 and degenerates to ``terms`` exactly at 1.
    """
    if terms <= 0:
        return 0.0
    if ratio == 1.0:
        return float(terms)
    if ratio == 0.0:
        return 1.0
    log_r = math.log(ratio)
    return math.expm1(terms * log_r) / math.expm1(log_r)


def _check_principal(principal: float) -> None:
    if not (principal > 0 and math.isfinite(principal)):
        raise ValidationError(f"principal must be positive, got {principal}")


def build_schedule(principal: float, n: int, params: AaveRiskParams, prices: PriceFrame) -> LeverageSchedule:
    """Totals after ``n`` full loops.

    >>> s = build_schedule(100, 2, AaveRiskParams(0.69, 0.81), PriceFrame())
    >>> round(s.total_invested, 2), round(s.total_collateral, 2), round(s.total_debt, 2)
    (216.61, 169.0, 116.61)
    """
    _check_principal(principal)
    if n < 0:
        raise ValidationError("n must be nonnegative")
    r = prices.loop_ratio(params.ltv)
    invested = principal * _geometric_sum(r, n + 1)
    collateral = principal / prices.p_market * _geometric_sum(r, n)
    debt = principal * r * _geometric_sum(r, n)
    return LeverageSchedule(principal, n, invested, collateral, debt)


def build_schedule_generalized(
    principal: float, policy: LoopPolicy, params: AaveRiskParams, prices: PriceFrame
) -> LeverageSchedule:
    """Totals when each loop may supply, borrow or restake only a fraction.

    Loop ``k`` stakes ``s_k`` of the ETH on hand, supplies ``c_k`` of the
    stETH received and borrows ``b_k`` of the allowed amount.
    """
    _check_principal(principal)
    n = policy.n_loops
    s, c, b = policy.restake_fractions, policy.collateral_fractions, policy.borrow_fractions
    r = prices.loop_ratio(params.ltv)
    p_m = prices.p_market

    invested = collateral = debt = 0.0
    prod_s = 1.0
    prod_cb = 1.0  # c_1..c_{k-1} * b_1..b_{k-1}
    r_pow = 1.0  # r**(k-1)
    for k in range(1, n + 2):
        prod_s *= s[k - 1]
        invested += prod_s * prod_cb * r_pow
        if k <= n:
            supplied = prod_s * prod_cb * c[k - 1]
            collateral += supplied * r_pow / p_m
            debt += supplied * b[k - 1] * r_pow * r
            prod_cb *= c[k - 1] * b[k - 1]
            r_pow *= r
    return LeverageSchedule(principal, n, principal * invested, principal * collateral, principal * debt)


def multiplier_limit(params: AaveRiskParams, prices: PriceFrame) -> float:
    """Multiplier reached as the number of loops goes to infinity."""
    r = prices.loop_ratio(params.ltv)
    if r >= 1.0:
        raise DomainError(f"loop ratio {r:.6f} >= 1: leverage diverges")
    return 1.0 / (1.0 - r)


def health_factor(schedule: LeverageSchedule, params: AaveRiskParams, prices: PriceFrame) -> float:
    """Aave health factor of a schedule, marked at ``prices.p_aave_tc``."""
    if schedule.total_debt <= 0:
        return NO_DEBT
    return schedule.total_collateral * prices.p_aave_tc * params.liquidation_threshold / schedule.total_debt


def health_factor_closed_form(params: AaveRiskParams, prices: PriceFrame) -> float:
    """HF of any full-policy schedule; independent of principal and loop count."""
    return prices.p_aave_tc * params.liquidation_threshold / (prices.p_aave_t0 * params.ltv)


def general_health_factor(collaterals: Iterable[tuple[float, float]], debts: Iterable[float]) -> float:
    """Threshold-weighted collateral value over total debt.

    ``collaterals`` holds ``(value_in_eth, liquidation_threshold)`` pairs.
    """
    collaterals = list(collaterals)
    debts = list(debts)
    if any(v < 0 for v, _ in collaterals) or any(d < 0 for d in debts):
        raise ValidationError("collateral and debt values must be nonnegative")
    total_debt = math.fsum(debts)
    if not debts or total_debt <= 0:
        raise DomainError("health factor is undefined without debt")
    return math.fsum(v * lt for v, lt in collaterals) / total_debt


def max_price_drop(params: AaveRiskParams) -> float:
    """Largest relative fall of the lending price that keeps HF >= 1 (a negative ratio)."""
    return params.ltv / params.liquidation_threshold - 1.0


def net_apr(schedule: LeverageSchedule, rates: RateSet, params: AaveRiskParams, prices: PriceFrame) -> AprBreakdown:
    s = schedule.principal
    p_m = prices.p_market
    staking = rates.staking_apr * schedule.multiplier
    deposit = rates.deposit_apr * schedule.total_collateral * p_m / s
    if schedule.total_debt > 0:
        if params.ltv == 0:
            raise DomainError("ltv of 0 with outstanding debt")
        borrow = rates.borrow_apr * schedule.total_debt * p_m / (s * params.ltv * prices.p_aave_t0)
    else:
        borrow = 0.0
    return AprBreakdown(staking, deposit, borrow)


def actual_apr(
    total_deposit_steth: float,
    total_withdraw_steth: float,
    total_borrow_eth: float,
    total_repay_eth: float,
    p_steth_at_last_withdraw: float,
    first_deposit_block: int,
    last_withdraw_block: int,
    block_time: float = DEFAULT_BLOCK_TIME,
) -> float:
    """Realized APR of a closed position from its aggregate flows.

    Accrued ETH interest is converted to stETH at the price of the last
    withdrawal and netted against the stETH gained, then annualized over the
    block span.
    """
    span = last_withdraw_block - first_deposit_block
    if span <= 0:
        raise DomainError("last withdraw must come after the first deposit")
    if total_deposit_steth <= 0:
        raise DomainError("total deposit must be positive")
    if p_steth_at_last_withdraw <= 0:
        raise DomainError("stETH price must be positive")
    accrued_steth = total_withdraw_steth - total_deposit_steth
    accrued_eth = total_repay_eth - total_borrow_eth
    blocks_per_year = SECONDS_PER_YEAR / block_time
    return (accrued_steth - accrued_eth / p_steth_at_last_withdraw) * blocks_per_year / (total_deposit_steth * span)


def implied_market_price(
    target_multiplier: float,
    n: int,
    params: AaveRiskParams,
    p_aave_t0: float = 1.0,
    bracket: tuple[float, float] = (0.97, 1.0),
) -> float:
    """Secondary-market price at which an ``n``-loop indirect position hits ``target_multiplier``."""
    from scipy.optimize import brentq

    def gap(p_market: float) -> float:
        prices = PriceFrame(p_secondary_t0=p_market, p_aave_t0=p_aave_t0, market_mode=MarketMode.INDIRECT)
        return build_schedule(1.0, n, params, prices).multiplier - target_multiplier

    lo, hi = bracket
    if gap(lo) * gap(hi) > 0:
        raise DomainError(f"multiplier {target_multiplier} not attainable for prices in {bracket}")
    return brentq(gap, lo, hi, xtol=1e-14, rtol=1e-14)


# Historical Aave v2 stETH reserve configuration.


def load_param_schedule(path: str | Path | None = None) -> list[AaveRiskParams]:
    """Read a ``block,ltv,lt`` CSV, sorted by block."""
    if path is None:
        text = resources.files("lsd_cascade").joinpath("data/aave_v2_steth_params.csv").read_text()
    else:
        text = Path(path).read_text()
    rows = list(csv.DictReader(text.splitlines()))
    out = [AaveRiskParams(float(r["ltv"]), float(r["lt"]), int(r["block"])) for r in rows]
    out.sort(key=lambda p: p.effective_from_block)
    return out


def params_at_block(block: int, schedule: Sequence[AaveRiskParams] | None = None) -> AaveRiskParams:
    """Configuration in force at ``block``: the latest entry at or before it."""
    if schedule is None:
        schedule = load_param_schedule()
    blocks = [p.effective_from_block for p in schedule]
    i = bisect.bisect_right(blocks, block)
    if i == 0:
        raise LookupError(f"no parameter entry at or before block {block}")
    return schedule[i - 1]
