"""Two-asset StableSwap pool (stETH-ETH), integer wei arithmetic.

Coin 0 is ETH and coin 1 is stETH, both 18 decimals and pegged 1:1 inside
the invariant. The solvers follow the on-chain Newton iterations: they work
on integers, stop once successive iterates differ by at most one wei and
round every output in favour of the pool.

Amplification is stored as a ``Decimal`` with two fractional digits,
matching the on-chain ``A_PRECISION`` of 100.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from decimal import Decimal
from pathlib import Path

from .errors import InsufficientLiquidity, NonConvergence, ValidationError
from .fixedpoint import WAD, format_wei, to_wei

N_COINS = 2
A_PRECISION = 100
FEE_DENOMINATOR = 10**10
MAX_FEE = Decimal("0.01")
MAX_ITERATIONS = 256

DEFAULT_FEE = Decimal("0.0004")
PROBE_STETH = 100 * WAD

# Pool state forked at block 17,500,000.
FORK_RESERVE_ETH = 265_972 * WAD
FORK_RESERVE_STETH = 266_966 * WAD
REFERENCE_DUMP_STETH = 170_000 * WAD
REFERENCE_POST_DUMP_RATE = 0.9052
# calibrate_amplification(REFERENCE_POST_DUMP_RATE, fork_pool(1), REFERENCE_DUMP_STETH)
CALIBRATED_AMPLIFICATION = Decimal("30.09")


class Direction(enum.Enum):
    STETH_TO_ETH = "steth_to_eth"
    ETH_TO_STETH = "eth_to_steth"

    @property
    def indices(self) -> tuple[int, int]:
        return (1, 0) if self is Direction.STETH_TO_ETH else (0, 1)

    @property
    def reverse(self) -> "Direction":
        return Direction.ETH_TO_STETH if self is Direction.STETH_TO_ETH else Direction.STETH_TO_ETH


@dataclass(frozen=True)
class PoolState:
    reserve_eth: int
    reserve_steth: int
    amplification: Decimal
    fee: Decimal = DEFAULT_FEE

    def __post_init__(self):
        amp = Decimal(self.amplification)
        fee = Decimal(self.fee)
        object.__setattr__(self, "amplification", amp)
        object.__setattr__(self, "fee", fee)
        if self.reserve_eth <= 0 or self.reserve_steth <= 0:
            raise ValidationError("pool reserves must be strictly positive")
        if amp < 1 or (amp * A_PRECISION) != (amp * A_PRECISION).to_integral_value():
            raise ValidationError(f"amplification must be >= 1 with at most 2 decimals, got {amp}")
        if not Decimal(0) <= fee <= MAX_FEE:
            raise ValidationError(f"fee must lie in [0, {MAX_FEE}], got {fee}")
        if (fee * FEE_DENOMINATOR) != (fee * FEE_DENOMINATOR).to_integral_value():
            raise ValidationError(f"fee resolution is 1e-10, got {fee}")

    @property
    def balances(self) -> tuple[int, int]:
        return (self.reserve_eth, self.reserve_steth)

    @property
    def amp_precise(self) -> int:
        return int(self.amplification * A_PRECISION)

    @property
    def fee_precise(self) -> int:
        return int(self.fee * FEE_DENOMINATOR)

    def with_balances(self, balances: tuple[int, int]) -> "PoolState":
        return replace(self, reserve_eth=balances[0], reserve_steth=balances[1])

    def to_json(self) -> dict:
        return {
            "reserve_eth": format_wei(self.reserve_eth),
            "reserve_steth": format_wei(self.reserve_steth),
            "amplification": str(self.amplification),
            "fee": str(self.fee),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PoolState":
        try:
            return cls(
                reserve_eth=to_wei(obj["reserve_eth"]),
                reserve_steth=to_wei(obj["reserve_steth"]),
                amplification=Decimal(str(obj["amplification"])),
                fee=Decimal(str(obj.get("fee", DEFAULT_FEE))),
            )
        except (KeyError, TypeError, ValueError, ArithmeticError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"bad pool snapshot: {exc}") from exc


def fork_pool(amplification: Decimal | str, fee: Decimal | str = DEFAULT_FEE) -> PoolState:
    return PoolState(FORK_RESERVE_ETH, FORK_RESERVE_STETH, Decimal(amplification), Decimal(fee))


def save_pool(state: PoolState, path: str | Path) -> None:
    Path(path).write_text(json.dumps(state.to_json(), indent=2) + "\n")


def load_pool(path: str | Path) -> PoolState:
    return PoolState.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SwapQuote:
    amount_in: int
    amount_out: int
    direction: Direction
    fee_amount: int
    post_state: PoolState

    @property
    def effective_rate(self) -> float:
        return self.amount_out / self.amount_in


# Solvers ------------------------------------------------------------------


def solve_d(balances: tuple[int, int], amp: int) -> tuple[int, int]:
    """Invariant D and the number of Newton iterations used.

    ``amp`` is the amplification times ``A_PRECISION``.
    """
    s = sum(balances)
    if s == 0:
        return 0, 0
    d = s
    ann = amp * N_COINS
    for i in range(1, MAX_ITERATIONS + 1):
        d_p = d
        for x in balances:
            d_p = d_p * d // x
        d_p //= N_COINS**N_COINS
        d_prev = d
        d = (
            (ann * s // A_PRECISION + d_p * N_COINS)
            * d
            // ((ann - A_PRECISION) * d // A_PRECISION + (N_COINS + 1) * d_p)
        )
        if abs(d - d_prev) <= 1:
            return d, i
    raise NonConvergence(f"D did not converge for balances={balances}, amp={amp}")


def solve_y(x_new: int, amp: int, d: int) -> tuple[int, int]:
    """Balance of the other coin that keeps D fixed when one coin holds ``x_new``."""
    ann = amp * N_COINS
    c = d * d // (x_new * N_COINS)
    c = c * d * A_PRECISION // (ann * N_COINS)
    b = x_new + d * A_PRECISION // ann
    y = d
    for i in range(1, MAX_ITERATIONS + 1):
        y_prev = y
        y = (y * y + c) // (2 * y + b - d)
        if abs(y - y_prev) <= 1:
            return y, i
    raise NonConvergence(f"y did not converge for x={x_new}, amp={amp}, D={d}")


def invariant_d(state: PoolState) -> int:
    return solve_d(state.balances, state.amp_precise)[0]


# Trading ------------------------------------------------------------------


def get_dy(state: PoolState, direction: Direction, dx: int) -> SwapQuote:
    """Quote a trade of ``dx`` wei without touching ``state``."""
    if dx <= 0:
        raise ValidationError(f"trade size must be positive, got {dx}")
    i, j = direction.indices
    xp = state.balances
    amp = state.amp_precise
    d, _ = solve_d(xp, amp)
    y, _ = solve_y(xp[i] + dx, amp, d)
    dy = xp[j] - y - 1  # one wei of slack in favour of the pool
    if dy <= 0:
        raise InsufficientLiquidity(f"trade of {dx} wei yields nothing")
    fee = dy * state.fee_precise // FEE_DENOMINATOR
    out = dy - fee
    if out <= 0 or out >= xp[j]:
        raise InsufficientLiquidity(f"trade of {dx} wei cannot be filled")
    new = list(xp)
    new[i] += dx
    new[j] -= out  # fee stays in the pool
    return SwapQuote(dx, out, direction, fee, state.with_balances((new[0], new[1])))


def exchange(state: PoolState, direction: Direction, dx: int) -> tuple[int, PoolState]:
    quote = get_dy(state, direction, dx)
    return quote.amount_out, quote.post_state


def spot_rate(state: PoolState, probe: int = PROBE_STETH) -> float:
    """ETH received per stETH for a ``probe``-sized sale, fee included."""
    return get_dy(state, Direction.STETH_TO_ETH, probe).amount_out / probe


# Calibration --------------------------------------------------------------


@dataclass(frozen=True)
class Calibration:
    amplification: Decimal
    achieved_rate: float
    reachable: bool


def post_dump_rate(state: PoolState, dump: int, probe: int = PROBE_STETH) -> float:
    if dump > 0:
        _, state = exchange(state, Direction.STETH_TO_ETH, dump)
    return spot_rate(state, probe)


def calibrate_amplification(
    target_rate: float,
    initial: PoolState,
    dump_amount: int,
    bounds: tuple[int, int] = (1, 5000),
    tolerance: float = 1e-6,
    probe: int = PROBE_STETH,
) -> Calibration:
    """Amplification whose post-dump probe rate is closest to ``target_rate``.

    The post-dump rate rises with amplification (a flatter curve absorbs the
    dump), so a bisection over the 0.01 grid of admissible values suffices.
    If the lower bound already lands within ``tolerance`` it is returned.
    """
    if not 0 < target_rate < 1:
        raise ValidationError(f"target rate must lie in (0, 1), got {target_rate}")
    lo, hi = bounds[0] * A_PRECISION, bounds[1] * A_PRECISION

    def rate(amp: int) -> float:
        return post_dump_rate(replace(initial, amplification=Decimal(amp) / A_PRECISION), dump_amount, probe)

    def result(amp: int, reachable: bool) -> Calibration:
        return Calibration(Decimal(amp) / A_PRECISION, rate(amp), reachable)

    r_lo = rate(lo)
    if abs(r_lo - target_rate) <= tolerance:
        return result(lo, True)
    r_hi = rate(hi)
    if target_rate < r_lo:
        return result(lo, False)
    if target_rate > r_hi:
        return result(hi, abs(r_hi - target_rate) <= tolerance)

    # invariant: rate(lo) < target <= rate(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if rate(mid) < target_rate:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi), key=lambda a: (abs(rate(a) - target_rate), a))
    return result(best, True)
