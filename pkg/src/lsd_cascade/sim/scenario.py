"""Scenario configuration, simulation records and their file formats."""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

from ..amm import REFERENCE_DUMP_STETH, PROBE_STETH, PoolState
from ..analytics import NO_DEBT, NO_DEBT_LABEL, AaveRiskParams, general_health_factor
from ..errors import ValidationError
from ..fixedpoint import format_wei, to_wei, wei_to_float


class Cohort(enum.Enum):
    LEVERAGE = "leverage"
    ORDINARY = "ordinary"


class LiquidationOrder(enum.Enum):
    ASCENDING_HF = "ascending_hf"
    INPUT = "input"


class UnwindMode(enum.Enum):
    FULL = "full"
    TO_TARGET_HF = "to_target_hf"


@dataclass(frozen=True)
class Unwind:
    mode: UnwindMode = UnwindMode.FULL
    target_hf: float | None = None

    def __post_init__(self):
        if self.mode is UnwindMode.TO_TARGET_HF and (self.target_hf is None or self.target_hf < 1):
            raise ValidationError("to_target_hf unwinding needs a target HF >= 1")

    @classmethod
    def full(cls) -> "Unwind":
        return cls(UnwindMode.FULL)

    @classmethod
    def to_target(cls, hf: float) -> "Unwind":
        return cls(UnwindMode.TO_TARGET_HF, hf)


@dataclass
class SimPosition:
    """An stETH-collateral / ETH-debt Aave position. Amounts are wei."""

    id: str
    cohort: Cohort
    collateral_steth: int
    debt_eth: int
    risk: AaveRiskParams
    hf: float = NO_DEBT
    liquidated: bool = False
    n_loops: int | None = None

    def __post_init__(self):
        if self.collateral_steth < 0 or self.debt_eth < 0:
            raise ValidationError(f"position {self.id}: amounts must be nonnegative")

    @property
    def live(self) -> bool:
        return not self.liquidated

    def health_factor(self, price: float) -> float:
        if self.debt_eth == 0:
            return NO_DEBT
        return general_health_factor(
            [(wei_to_float(self.collateral_steth) * price, self.risk.liquidation_threshold)],
            [wei_to_float(self.debt_eth)],
        )

    def mark(self, price: float) -> float:
        self.hf = self.health_factor(price)
        return self.hf

    def leverage(self, price: float) -> float:
        """Collateral value over equity; 1 for an unlevered position."""
        value = wei_to_float(self.collateral_steth) * price
        equity = value - wei_to_float(self.debt_eth)
        return value / equity if equity > 0 else float("inf")

    def to_json(self) -> dict:
        obj = {
            "id": self.id,
            "cohort": self.cohort.value,
            "collateral_steth": format_wei(self.collateral_steth),
            "debt_eth": format_wei(self.debt_eth),
            "ltv": repr(self.risk.ltv),
            "lt": repr(self.risk.liquidation_threshold),
        }
        if self.n_loops is not None:
            obj["n_loops"] = self.n_loops
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "SimPosition":
        return cls(
            id=str(obj["id"]),
            cohort=Cohort(obj["cohort"]),
            collateral_steth=to_wei(obj["collateral_steth"]),
            debt_eth=to_wei(obj["debt_eth"]),
            risk=AaveRiskParams(float(obj["ltv"]), float(obj["lt"])),
            n_loops=obj.get("n_loops"),
        )


@dataclass(frozen=True)
class CohortSpec:
    """Parameters of the synthetic cohort generator (see :mod:`.cohorts`)."""

    seed: int = 17_500_000
    first_loop_only: bool = False
    n_direct: int = 262
    n_indirect: int = 180
    n_ordinary: int = 442
    leverage_invested_eth: Decimal = Decimal("537123")
    ordinary_collateral_steth: Decimal = Decimal("120000")

    def to_json(self) -> dict:
        return {
            "generator": "onchain_shaped",
            "seed": self.seed,
            "first_loop_only": self.first_loop_only,
            "n_direct": self.n_direct,
            "n_indirect": self.n_indirect,
            "n_ordinary": self.n_ordinary,
            "leverage_invested_eth": str(self.leverage_invested_eth),
            "ordinary_collateral_steth": str(self.ordinary_collateral_steth),
        }


@dataclass
class ScenarioConfig:
    pool: PoolState
    positions: list[SimPosition] = field(default_factory=list)
    cohort: CohortSpec | None = None
    name: str = "scenario"
    initial_dump_steth: int = REFERENCE_DUMP_STETH
    include_leverage_cohort: bool = True
    include_ordinary_cohort: bool = True
    deleverage_at_round0: bool = False
    deleverage_unwind: Unwind = field(default_factory=Unwind.full)
    max_rounds: int = 1000
    liquidation_order: LiquidationOrder = LiquidationOrder.ASCENDING_HF
    price_probe_steth: int = PROBE_STETH
    close_factor: Decimal = Decimal(1)

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValidationError("max_rounds must be at least 1")
        if not (self.include_leverage_cohort or self.include_ordinary_cohort):
            raise ValidationError("at least one cohort must be included")
        if self.initial_dump_steth < 0 or self.price_probe_steth <= 0:
            raise ValidationError("dump must be nonnegative and the probe positive")
        if not Decimal(0) < self.close_factor <= 1:
            raise ValidationError("close_factor must lie in (0, 1]")

    def seed_positions(self) -> list[SimPosition]:
        """Fresh copies of the included positions (generated ones first)."""
        from .cohorts import generate_cohort

        pool = list(generate_cohort(self.cohort)) if self.cohort else []
        pool += [SimPosition.from_json(p.to_json()) for p in self.positions]
        wanted = set()
        if self.include_leverage_cohort:
            wanted.add(Cohort.LEVERAGE)
        if self.include_ordinary_cohort:
            wanted.add(Cohort.ORDINARY)
        return [p for p in pool if p.cohort in wanted]

    def to_json(self) -> dict:
        unwind = {"mode": self.deleverage_unwind.mode.value}
        if self.deleverage_unwind.target_hf is not None:
            unwind["target_hf"] = repr(self.deleverage_unwind.target_hf)
        obj = {
            "name": self.name,
            "pool": self.pool.to_json(),
            "initial_dump_steth": format_wei(self.initial_dump_steth),
            "include_leverage_cohort": self.include_leverage_cohort,
            "include_ordinary_cohort": self.include_ordinary_cohort,
            "deleverage_at_round0": self.deleverage_at_round0,
            "deleverage_unwind": unwind,
            "max_rounds": self.max_rounds,
            "liquidation_order": self.liquidation_order.value,
            "price_probe_steth": format_wei(self.price_probe_steth),
            "close_factor": str(self.close_factor),
        }
        if self.cohort is not None:
            obj["cohort"] = self.cohort.to_json()
        if self.positions:
            obj["positions"] = [p.to_json() for p in self.positions]
        return obj


class ScenarioError(ValidationError):
    """Scenario validation failure located by a JSON pointer."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


def _get(obj: dict, key: str, pointer: str, kind, default=...):
    if key not in obj:
        if default is ...:
            raise ScenarioError(f"{pointer}/{key}", "missing")
        return default
    value = obj[key]
    if kind is bool and not isinstance(value, bool):
        raise ScenarioError(f"{pointer}/{key}", "expected a boolean")
    if kind is int and (not isinstance(value, int) or isinstance(value, bool)):
        raise ScenarioError(f"{pointer}/{key}", "expected an integer")
    if kind is str and not isinstance(value, str):
        raise ScenarioError(f"{pointer}/{key}", "expected a decimal string")
    if kind is dict and not isinstance(value, dict):
        raise ScenarioError(f"{pointer}/{key}", "expected an object")
    if kind is list and not isinstance(value, list):
        raise ScenarioError(f"{pointer}/{key}", "expected an array")
    return value


def _amount(obj: dict, key: str, pointer: str, default: int) -> int:
    raw = _get(obj, key, pointer, str, None)
    if raw is None:
        return default
    try:
        return to_wei(raw)
    except ValueError as exc:
        raise ScenarioError(f"{pointer}/{key}", str(exc)) from None


def scenario_from_json(obj: dict) -> ScenarioConfig:
    if not isinstance(obj, dict):
        raise ScenarioError("", "scenario must be a JSON object")
    try:
        pool = PoolState.from_json(_get(obj, "pool", "", dict))
    except ScenarioError:
        raise
    except ValidationError as exc:
        raise ScenarioError("/pool", str(exc)) from None

    positions = []
    for i, raw in enumerate(_get(obj, "positions", "", list, [])):
        try:
            positions.append(SimPosition.from_json(raw))
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"/positions/{i}", f"bad position: {exc}") from None

    cohort = None
    raw_cohort = _get(obj, "cohort", "", dict, None)
    if raw_cohort is not None:
        if raw_cohort.get("generator", "onchain_shaped") != "onchain_shaped":
            raise ScenarioError("/cohort/generator", "only 'onchain_shaped' is available")
        cohort = CohortSpec(
            seed=_get(raw_cohort, "seed", "/cohort", int, CohortSpec.seed),
            first_loop_only=_get(raw_cohort, "first_loop_only", "/cohort", bool, False),
            n_direct=_get(raw_cohort, "n_direct", "/cohort", int, CohortSpec.n_direct),
            n_indirect=_get(raw_cohort, "n_indirect", "/cohort", int, CohortSpec.n_indirect),
            n_ordinary=_get(raw_cohort, "n_ordinary", "/cohort", int, CohortSpec.n_ordinary),
            leverage_invested_eth=Decimal(
                _get(raw_cohort, "leverage_invested_eth", "/cohort", str, str(CohortSpec.leverage_invested_eth))
            ),
            ordinary_collateral_steth=Decimal(
                _get(raw_cohort, "ordinary_collateral_steth", "/cohort", str, str(CohortSpec.ordinary_collateral_steth))
            ),
        )
    if cohort is None and not positions:
        raise ScenarioError("/positions", "scenario needs positions or a cohort generator")

    raw_unwind = _get(obj, "deleverage_unwind", "", dict, {"mode": "full"})
    try:
        mode = UnwindMode(raw_unwind.get("mode", "full"))
        target = raw_unwind.get("target_hf")
        unwind = Unwind(mode, float(target) if target is not None else None)
    except ValueError as exc:
        raise ScenarioError("/deleverage_unwind", str(exc)) from None

    try:
        order = LiquidationOrder(_get(obj, "liquidation_order", "", str, "ascending_hf"))
    except ValueError:
        raise ScenarioError("/liquidation_order", "expected 'ascending_hf' or 'input'") from None

    try:
        return ScenarioConfig(
            pool=pool,
            positions=positions,
            cohort=cohort,
            name=_get(obj, "name", "", str, "scenario"),
            initial_dump_steth=_amount(obj, "initial_dump_steth", "", REFERENCE_DUMP_STETH),
            include_leverage_cohort=_get(obj, "include_leverage_cohort", "", bool, True),
            include_ordinary_cohort=_get(obj, "include_ordinary_cohort", "", bool, True),
            deleverage_at_round0=_get(obj, "deleverage_at_round0", "", bool, False),
            deleverage_unwind=unwind,
            max_rounds=_get(obj, "max_rounds", "", int, 1000),
            liquidation_order=order,
            price_probe_steth=_amount(obj, "price_probe_steth", "", PROBE_STETH),
            close_factor=Decimal(_get(obj, "close_factor", "", str, "1")),
        )
    except ScenarioError:
        raise
    except ValidationError as exc:
        raise ScenarioError("", str(exc)) from None


def load_scenario(path: str | Path) -> ScenarioConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"invalid JSON: {exc.msg} (line {exc.lineno})") from None
    return scenario_from_json(obj)


def bundled_scenario_dir() -> Path:
    from importlib.resources import files

    return Path(str(files("lsd_cascade") / "scenarios"))


def resolve_scenario(ref: str | Path) -> Path:
    """A scenario file or directory, falling back to the bundled set (``sq1``, ``sq2_pair``...)."""
    path = Path(ref)
    if path.exists():
        return path
    base = bundled_scenario_dir()
    for candidate in (base / str(ref), base / f"{ref}.json"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no scenario file or bundled scenario named {str(ref)!r}")


def config_checksum(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# Results -----------------------------------------------------------------


class Termination(enum.Enum):
    NO_LIQUIDATABLE = "no_liquidatable"
    MAX_ROUNDS = "max_rounds"


@dataclass(frozen=True)
class RoundReport:
    round: int
    steth_price: float
    liquidated_count_leverage: int
    liquidated_count_ordinary: int
    liquidation_volume_eth: int
    deleverage_repaid_eth: int
    steth_sold: int
    eth_bought: int
    pool_before: PoolState
    pool_after: PoolState
    pool_drained: bool = False

    @property
    def liquidated_count(self) -> int:
        return self.liquidated_count_leverage + self.liquidated_count_ordinary


@dataclass(frozen=True)
class SimulationResult:
    name: str
    rounds: tuple[RoundReport, ...]
    termination_reason: Termination
    initial_price: float
    bad_debt_eth: int = 0

    @property
    def terminal_price(self) -> float:
        return self.rounds[-1].steth_price

    @property
    def total_liquidated_eth(self) -> int:
        return sum(r.liquidation_volume_eth for r in self.rounds)

    @property
    def total_deleverage_repaid_eth(self) -> int:
        return sum(r.deleverage_repaid_eth for r in self.rounds)

    @property
    def n_rounds(self) -> int:
        """Liquidation rounds run, excluding the round-0 setup."""
        return self.rounds[-1].round

    def liquidated(self, cohort: Cohort) -> int:
        attr = "liquidated_count_leverage" if cohort is Cohort.LEVERAGE else "liquidated_count_ordinary"
        return sum(getattr(r, attr) for r in self.rounds)

    def summary_json(self) -> dict:
        return {
            "name": self.name,
            "termination_reason": self.termination_reason.value,
            "rounds": self.n_rounds,
            "initial_price": _fmt_price(self.initial_price),
            "terminal_price": _fmt_price(self.terminal_price),
            "total_liquidated_eth": format_wei(self.total_liquidated_eth),
            "total_deleverage_repaid_eth": format_wei(self.total_deleverage_repaid_eth),
            "liquidated_leverage": self.liquidated(Cohort.LEVERAGE),
            "liquidated_ordinary": self.liquidated(Cohort.ORDINARY),
            "bad_debt_eth": format_wei(self.bad_debt_eth),
            "final_pool": self.rounds[-1].pool_after.to_json(),
        }


CSV_HEADER = ("round", "price", "liq_count_lev", "liq_count_ord", "liq_volume_eth", "delev_repaid_eth")


def _fmt_price(price: float) -> str:
    return f"{price:.12f}"


def rounds_csv(result: SimulationResult) -> str:
    lines = [",".join(CSV_HEADER)]
    for r in result.rounds:
        lines.append(
            ",".join(
                (
                    str(r.round),
                    _fmt_price(r.steth_price),
                    str(r.liquidated_count_leverage),
                    str(r.liquidated_count_ordinary),
                    format_wei(r.liquidation_volume_eth),
                    format_wei(r.deleverage_repaid_eth),
                )
            )
        )
    return "\n".join(lines) + "\n"


def hf_label(hf: float) -> str | float:
    return NO_DEBT_LABEL if hf == NO_DEBT else hf
