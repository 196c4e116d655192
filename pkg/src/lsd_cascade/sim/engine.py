"""Round-based cascading-liquidation engine.

Each round marks every live position at the pool's current probe price,
liquidates those with HF < 1 (most distressed first) and sells the seized
stETH into the pool. The price is refreshed only between rounds. The run
ends when a round finds nothing to liquidate.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal

from ..amm import Direction, PoolState, exchange, spot_rate
from ..errors import InsufficientLiquidity, ValidationError
from .scenario import (
    Cohort,
    LiquidationOrder,
    RoundReport,
    ScenarioConfig,
    SimPosition,
    SimulationResult,
    Termination,
    Unwind,
    UnwindMode,
)

log = logging.getLogger(__name__)

MAX_DELEVERAGE_STEPS = 1000
# stETH sold to clear the remaining debt is padded by this much to absorb slippage
FINAL_TRANCHE_PAD = Decimal("1.002")


@dataclass(frozen=True)
class DeleverageStep:
    position_id: str
    tranche_steth: int
    proceeds_eth: int
    repaid_eth: int
    hf_after: float
    leverage_after: float
    price_after: float


@dataclass
class CascadeEngine:
    config: ScenarioConfig
    pool: PoolState
    positions: list[SimPosition]
    price: float = 0.0
    round: int = 0
    terminated: bool = False
    termination_reason: Termination | None = None
    bad_debt_eth: int = 0
    deleverage_log: list[DeleverageStep] = field(default_factory=list)

    def refresh(self) -> float:
        self.price = spot_rate(self.pool, self.config.price_probe_steth)
        for pos in self.positions:
            if pos.live:
                pos.mark(self.price)
        return self.price

    def _sell(self, steth: int) -> int:
        out, self.pool = exchange(self.pool, Direction.STETH_TO_ETH, steth)
        return out

    def liquidatable(self) -> list[SimPosition]:
        out = [p for p in self.positions if p.live and p.hf < 1.0 and p.collateral_steth > 0]
        if self.config.liquidation_order is LiquidationOrder.ASCENDING_HF:
            out.sort(key=lambda p: (p.hf, p.id))
        return out

    def run_round(self) -> RoundReport:
        """Mark, liquidate and sell; one round of the cascade."""
        if self.terminated:
            raise RuntimeError("simulation already terminated")
        self.round += 1
        pool_before = self.pool
        self.refresh()
        targets = self.liquidatable()
        counts = {Cohort.LEVERAGE: 0, Cohort.ORDINARY: 0}
        volume = sold = bought = 0
        drained = False
        close = self.config.close_factor

        for pos in targets:
            if close == 1:
                repaid, seized = pos.debt_eth, pos.collateral_steth
            else:
                repaid = int(pos.debt_eth * close)
                seized = min(pos.collateral_steth, int(Decimal(repaid) / Decimal(repr(self.price))))
            try:
                proceeds = self._sell(seized) if seized > 0 else 0
            except InsufficientLiquidity:
                log.warning("round %d: pool cannot absorb %d wei stETH, halting", self.round, seized)
                drained = True
                break
            pos.debt_eth -= repaid
            pos.collateral_steth -= seized
            if pos.collateral_steth == 0:
                # nothing left to seize; any remaining debt is written off
                self.bad_debt_eth += pos.debt_eth
                pos.debt_eth = 0
            if pos.debt_eth == 0:
                pos.liquidated = True
                pos.collateral_steth = 0
                counts[pos.cohort] += 1
            volume += repaid
            sold += seized
            bought += proceeds

        if not targets:
            self.terminated = True
            self.termination_reason = Termination.NO_LIQUIDATABLE
        elif drained and not bought:
            self.terminated = True
            self.termination_reason = Termination.NO_LIQUIDATABLE

        return RoundReport(
            round=self.round,
            steth_price=self.price,
            liquidated_count_leverage=counts[Cohort.LEVERAGE],
            liquidated_count_ordinary=counts[Cohort.ORDINARY],
            liquidation_volume_eth=volume,
            deleverage_repaid_eth=0,
            steth_sold=sold,
            eth_bought=bought,
            pool_before=pool_before,
            pool_after=self.pool,
            pool_drained=drained,
        )

    def deleverage(self, pos: SimPosition, unwind: Unwind) -> int:
        """Swap-repay-withdraw until the debt is gone (or HF reaches the target).

        Each step sells a collateral tranche for ETH and repays with the
        proceeds. The tranche is the collateral that can be withdrawn while
        keeping HF >= 1. A position already at or below HF 1 has no such
        headroom, so it sells, in one atomic step, the smallest tranche whose
        proceeds bring HF back to 1. Returns the ETH repaid.
        """
        if pos.cohort is not Cohort.LEVERAGE:
            raise ValidationError(f"position {pos.id} is not a leverage position")
        if not pos.live or pos.debt_eth == 0:
            return 0
        lt = Decimal(repr(pos.risk.liquidation_threshold))
        repaid_total = 0
        for _ in range(MAX_DELEVERAGE_STEPS):
            if pos.debt_eth == 0 or pos.collateral_steth == 0:
                break
            price = spot_rate(self.pool, self.config.price_probe_steth)
            if unwind.mode is UnwindMode.TO_TARGET_HF and pos.health_factor(price) >= unwind.target_hf:
                break
            p = Decimal(repr(price))
            debt = Decimal(pos.debt_eth)
            coll = Decimal(pos.collateral_steth)
            clear_all = int(debt / p * FINAL_TRANCHE_PAD) + 1
            headroom = int(coll - debt / (p * lt))
            if headroom > 0:
                tranche = headroom
            else:
                tranche = int((debt - coll * p * lt) / (p * (1 - lt)) * FINAL_TRANCHE_PAD) + 1
            tranche = min(tranche, clear_all, pos.collateral_steth)
            try:
                proceeds = self._sell(tranche)
            except InsufficientLiquidity:
                log.info("deleverage of %s stopped: pool illiquid", pos.id)
                break
            repay = min(proceeds, pos.debt_eth)
            pos.debt_eth -= repay
            pos.collateral_steth -= tranche
            repaid_total += repay
            after = spot_rate(self.pool, self.config.price_probe_steth)
            self.deleverage_log.append(
                DeleverageStep(pos.id, tranche, proceeds, repay, pos.health_factor(after), pos.leverage(after), after)
            )
            if proceeds == 0:
                break
        pos.mark(spot_rate(self.pool, self.config.price_probe_steth))
        return repaid_total

    def deleverage_cohort(self) -> RoundReport:
        """Round 0 of a deleveraging scenario: every leverage position unwinds."""
        pool_before = self.pool
        self.refresh()
        order = sorted(
            (p for p in self.positions if p.live and p.cohort is Cohort.LEVERAGE and p.debt_eth > 0),
            key=lambda p: (p.hf, p.id),
        )
        eth_before, steth_before = self.pool.reserve_eth, self.pool.reserve_steth
        repaid = sum(self.deleverage(p, self.config.deleverage_unwind) for p in order)
        self.refresh()
        return RoundReport(
            round=0,
            steth_price=self.price,
            liquidated_count_leverage=0,
            liquidated_count_ordinary=0,
            liquidation_volume_eth=0,
            deleverage_repaid_eth=repaid,
            steth_sold=self.pool.reserve_steth - steth_before,
            eth_bought=eth_before - self.pool.reserve_eth,
            pool_before=pool_before,
            pool_after=self.pool,
        )

    def setup_report(self) -> RoundReport:
        return RoundReport(0, self.price, 0, 0, 0, 0, 0, 0, self.pool, self.pool)


def init_scenario(config: ScenarioConfig) -> CascadeEngine:
    """Seed the pool, execute the initial dump and mark every position."""
    pool = config.pool
    if config.initial_dump_steth > 0:
        _, pool = exchange(pool, Direction.STETH_TO_ETH, config.initial_dump_steth)
    engine = CascadeEngine(config=config, pool=pool, positions=config.seed_positions())
    engine.refresh()
    return engine


def run_simulation(config: ScenarioConfig) -> SimulationResult:
    engine = init_scenario(config)
    initial_price = engine.price
    if config.deleverage_at_round0:
        rounds = [engine.deleverage_cohort()]
    else:
        rounds = [engine.setup_report()]
    while not engine.terminated and engine.round < config.max_rounds:
        rounds.append(engine.run_round())
    reason = engine.termination_reason or Termination.MAX_ROUNDS
    return SimulationResult(config.name, tuple(rounds), reason, initial_price, engine.bad_debt_eth)


# Comparison ---------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioComparison:
    names: tuple[str, ...]
    results: tuple[SimulationResult, ...]
    rounds: tuple[int, ...]
    prices: dict[str, list[float | None]]
    liquidated_leverage: dict[str, list[int | None]]
    liquidated_ordinary: dict[str, list[int | None]]
    volumes: dict[str, list[int | None]]
    seed_mismatch: bool = False

    def result(self, name: str) -> SimulationResult:
        return self.results[self.names.index(name)]


def _pad(values: list, length: int) -> list:
    return values + [None] * (length - len(values))


def compare_scenarios(configs: list[tuple[str, ScenarioConfig]], max_workers: int | None = None) -> ScenarioComparison:
    """Run scenarios independently and align their per-round series.

    Series are padded with ``None`` up to the longest run. Scenarios are
    expected to share one pool seed; a mismatch is flagged, not fatal.
    """
    if len(configs) < 2:
        raise ValidationError("comparison needs at least two scenarios")
    names = tuple(name for name, _ in configs)
    if len(set(names)) != len(names):
        raise ValidationError("scenario names must be unique")
    seeds = {(c.pool, c.initial_dump_steth) for _, c in configs}
    mismatch = len(seeds) > 1
    if mismatch:
        log.warning("scenarios do not share a pool seed")

    if max_workers and max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as ex:
            results = tuple(ex.map(run_simulation, [c for _, c in configs]))
    else:
        results = tuple(run_simulation(c) for _, c in configs)

    length = max(len(r.rounds) for r in results)
    series = {key: {} for key in ("price", "lev", "ord", "vol")}
    for name, res in zip(names, results):
        series["price"][name] = _pad([r.steth_price for r in res.rounds], length)
        series["lev"][name] = _pad([r.liquidated_count_leverage for r in res.rounds], length)
        series["ord"][name] = _pad([r.liquidated_count_ordinary for r in res.rounds], length)
        series["vol"][name] = _pad([r.liquidation_volume_eth for r in res.rounds], length)
    return ScenarioComparison(
        names=names,
        results=results,
        rounds=tuple(range(length)),
        prices=series["price"],
        liquidated_leverage=series["lev"],
        liquidated_ordinary=series["ord"],
        volumes=series["vol"],
        seed_mismatch=mismatch,
    )
