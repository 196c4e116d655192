"""Leverage-staking detection over exported event logs.

Input is JSON lines, one event per line::

    {"address": "0xabc", "kind": "stake", "block": 14617906, "log_index": 3,
     "amount_in": {"asset": "ETH", "value": "10"},
     "amount_out": {"asset": "stETH", "value": "10"}}

``amount_in`` is what the account hands to the protocol and ``amount_out``
what it receives. Stake and swap carry both sides. Deposit, borrow,
withdraw and repay carry their single amount in ``amount_in`` with
``amount_out`` null.
"""

from __future__ import annotations

import enum
import json
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation, localcontext
from pathlib import Path
from typing import Iterable, Sequence

from .analytics import DEFAULT_BLOCK_TIME, actual_apr
from .errors import DomainError, EventSchemaError, ValidationError

ETH = "ETH"
STETH = "stETH"
ASSETS = (ETH, STETH)

DEFAULT_TOLERANCE = Decimal("0.005")
DEFAULT_DUST = Decimal("1e-9")
MAX_TOLERANCE = Decimal("0.05")


class EventKind(enum.Enum):
    STAKE = "stake"
    DEPOSIT = "deposit"
    BORROW = "borrow"
    WITHDRAW = "withdraw"
    REPAY = "repay"
    SWAP = "swap"


class Strategy(enum.Enum):
    DIRECT = "direct"
    INDIRECT = "indirect"
    NONE = "none"


@dataclass(frozen=True)
class Amount:
    asset: str
    value: Decimal

    def to_json(self) -> dict:
        return {"asset": self.asset, "value": str(self.value)}


@dataclass(frozen=True)
class EventRecord:
    address: str
    kind: EventKind
    block: int
    log_index: int
    amount_in: Amount
    amount_out: Amount | None = None

    @property
    def position(self) -> tuple[int, int]:
        return (self.block, self.log_index)

    @property
    def amount(self) -> Decimal:
        """Single-sided amount of a deposit/borrow/withdraw/repay."""
        return self.amount_in.value

    def to_json(self) -> dict:
        return {
            "address": self.address,
            "kind": self.kind.value,
            "block": self.block,
            "log_index": self.log_index,
            "amount_in": self.amount_in.to_json(),
            "amount_out": self.amount_out.to_json() if self.amount_out else None,
        }


# Parsing ------------------------------------------------------------------


@dataclass
class ParsedEvents:
    records: list[EventRecord]
    errors: list[EventSchemaError] = field(default_factory=list)


def _amount(obj, name: str, line_no: int) -> Amount:
    if not isinstance(obj, dict):
        raise EventSchemaError(line_no, f"{name} must be an object")
    asset = obj.get("asset")
    if asset not in ASSETS:
        raise EventSchemaError(line_no, f"{name}.asset must be one of {ASSETS}, got {asset!r}")
    raw = obj.get("value")
    if not isinstance(raw, str):
        raise EventSchemaError(line_no, f"{name}.value must be a decimal string")
    try:
        value = Decimal(raw)
    except InvalidOperation:
        raise EventSchemaError(line_no, f"{name}.value is not a decimal: {raw!r}") from None
    if not value.is_finite() or value <= 0:
        raise EventSchemaError(line_no, f"{name}.value must be positive")
    return Amount(asset, value)


def _uint(obj: dict, name: str, line_no: int) -> int:
    value = obj.get(name)
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise EventSchemaError(line_no, f"{name} must be a nonnegative integer")
    return value


def parse_event_line(line: str, line_no: int) -> EventRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise EventSchemaError(line_no, f"invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise EventSchemaError(line_no, "event must be a JSON object")
    address = obj.get("address")
    if not isinstance(address, str) or not address:
        raise EventSchemaError(line_no, "address must be a nonempty string")
    try:
        kind = EventKind(obj.get("kind"))
    except ValueError:
        raise EventSchemaError(line_no, f"unknown kind {obj.get('kind')!r}") from None
    block = _uint(obj, "block", line_no)
    log_index = _uint(obj, "log_index", line_no)
    amount_in = _amount(obj.get("amount_in"), "amount_in", line_no)
    raw_out = obj.get("amount_out")
    amount_out = None if raw_out is None else _amount(raw_out, "amount_out", line_no)
    if kind in (EventKind.STAKE, EventKind.SWAP) and amount_out is None:
        raise EventSchemaError(line_no, f"{kind.value} events need amount_out")
    if kind is EventKind.STAKE and (amount_in.asset, amount_out.asset) != (ETH, STETH):
        raise EventSchemaError(line_no, "stake must take ETH in and give stETH out")
    return EventRecord(address, kind, block, log_index, amount_in, amount_out)


def parse_event_lines(lines: Iterable[str], strict: bool = False) -> ParsedEvents:
    """Parse JSON lines; bad lines are collected (or raised when ``strict``)."""
    records: list[EventRecord] = []
    errors: list[EventSchemaError] = []
    seen: set[tuple[str, int, int]] = set()
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = parse_event_line(line, line_no)
            key = (rec.address, rec.block, rec.log_index)
            if key in seen:
                raise EventSchemaError(line_no, f"duplicate (block, log_index) {rec.position} for {rec.address}")
            seen.add(key)
        except EventSchemaError as exc:
            if strict:
                raise
            errors.append(exc)
            continue
        records.append(rec)
    records.sort(key=lambda r: (r.block, r.log_index, r.address))
    return ParsedEvents(records, errors)


def parse_events(source: str | Path, strict: bool = False) -> ParsedEvents:
    """Read an event-log file. I/O errors propagate as ``OSError``."""
    with open(source, encoding="utf-8") as fh:
        return parse_event_lines(fh, strict=strict)


def group_by_address(records: Iterable[EventRecord]) -> dict[str, list[EventRecord]]:
    out: dict[str, list[EventRecord]] = defaultdict(list)
    for rec in records:
        out[rec.address].append(rec)
    for seq in out.values():
        seq.sort(key=lambda r: r.position)
    return dict(out)


# Detection ----------------------------------------------------------------


@dataclass(frozen=True)
class PositionTrace:
    address: str
    strategy: Strategy
    matched_sequence: tuple[EventRecord, ...] = ()
    window: tuple[EventRecord, ...] = ()
    n_loops: int = 0
    principal: Decimal = Decimal(0)
    total_invested: Decimal = Decimal(0)

    @property
    def realized_multiplier(self) -> Decimal | None:
        if self.strategy is Strategy.NONE or self.principal == 0:
            return None
        with localcontext() as ctx:
            ctx.prec = 28
            return self.total_invested / self.principal


def approx_equal(a: Decimal, b: Decimal, tolerance: Decimal, dust: Decimal = DEFAULT_DUST) -> bool:
    return abs(a - b) <= max(tolerance * max(abs(a), abs(b)), dust)


def _check_tolerance(tolerance) -> Decimal:
    tol = Decimal(str(tolerance))
    if not Decimal(0) <= tol <= MAX_TOLERANCE:
        raise ValidationError(f"tolerance must lie in [0, {MAX_TOLERANCE}], got {tol}")
    return tol


def _is_head(ev: EventRecord, strategy: Strategy) -> bool:
    if strategy is Strategy.DIRECT:
        return ev.kind is EventKind.STAKE
    return (
        ev.kind is EventKind.SWAP
        and ev.amount_in.asset == ETH
        and ev.amount_out is not None
        and ev.amount_out.asset == STETH
    )


def _relevant(ev: EventRecord, strategy: Strategy) -> bool:
    if ev.kind is EventKind.DEPOSIT:
        return ev.amount_in.asset == STETH
    if ev.kind is EventKind.BORROW:
        return ev.amount_in.asset == ETH
    if strategy is Strategy.DIRECT:
        return ev.kind is EventKind.STAKE
    return ev.kind is EventKind.SWAP


def _detect(events: Sequence[EventRecord], strategy: Strategy, tolerance, dust: Decimal) -> PositionTrace:
    tol = _check_tolerance(tolerance)
    address = events[0].address if events else ""
    seq = [ev for ev in sorted(events, key=lambda e: e.position) if _relevant(ev, strategy)]
    heads = [i for i, ev in enumerate(seq) if _is_head(ev, strategy)]

    # Earliest (head0, deposit, borrow, head1) in lexicographic index order.
    # The search is exhaustive, so loosening the tolerance can only add matches.
    for h0 in heads:
        received = seq[h0].amount_out.value
        for d in range(h0 + 1, len(seq)):
            dep = seq[d]
            if dep.kind is not EventKind.DEPOSIT or not approx_equal(received, dep.amount, tol, dust):
                continue
            for b in range(d + 1, len(seq)):
                bor = seq[b]
                if bor.kind is not EventKind.BORROW or not dep.amount > bor.amount:
                    continue
                for h1 in heads:
                    if h1 > b and approx_equal(bor.amount, seq[h1].amount_in.value, tol, dust):
                        return _trace(address, strategy, seq, (h0, d, b, h1))
    return PositionTrace(address, Strategy.NONE)


def _trace(address: str, strategy: Strategy, seq: list[EventRecord], window: tuple[int, ...]) -> PositionTrace:
    head_index = window[0]
    principal = seq[head_index].amount_in.value
    invested = sum((ev.amount_in.value for ev in seq[head_index:] if _is_head(ev, strategy)), Decimal(0))
    matched = tuple(seq)
    return PositionTrace(
        address=address,
        strategy=strategy,
        matched_sequence=matched,
        window=tuple(seq[i] for i in window),
        # a matched window whose legs are interleaved with other events is still one loop
        n_loops=max(1, _count_triples(matched, strategy)),
        principal=principal,
        total_invested=invested,
    )


def detect_direct(events: Sequence[EventRecord], tolerance=DEFAULT_TOLERANCE, dust=DEFAULT_DUST) -> PositionTrace:
    """Look for a chronological (stake, deposit, borrow, stake) sub-sequence.

    Conditions: the stETH received in the first stake matches the deposit,
    the deposit exceeds the borrow, and the borrow matches the ETH put into
    the second stake. On a match the account's whole stake/deposit/borrow
    sequence is returned, as the loops are counted over all of it.
    """
    return _detect(events, Strategy.DIRECT, tolerance, Decimal(dust))


def detect_indirect(events: Sequence[EventRecord], tolerance=DEFAULT_TOLERANCE, dust=DEFAULT_DUST) -> PositionTrace:
    """Same as :func:`detect_direct` with ETH->stETH swaps in place of stakes."""
    return _detect(events, Strategy.INDIRECT, tolerance, Decimal(dust))


def _count_triples(seq: Sequence[EventRecord], strategy: Strategy) -> int:
    n = i = 0
    while i + 2 < len(seq):
        a, b, c = seq[i : i + 3]
        if (
            _is_head(a, strategy)
            and b.kind is EventKind.DEPOSIT
            and c.kind is EventKind.BORROW
        ):
            n += 1
            i += 3
        else:
            i += 1
    return n


def count_loops(trace: PositionTrace) -> int:
    """Number of back-to-back (stake|swap, deposit, borrow) triples in the trace."""
    if trace.strategy is Strategy.NONE:
        raise DomainError("no loops in an undetected trace")
    return max(1, _count_triples(trace.matched_sequence, trace.strategy))


def realized_apr(events: Sequence[EventRecord], price_at_last_withdraw: float, block_time: float = DEFAULT_BLOCK_TIME) -> float:
    """Actual APR of one account from its Aave stETH/ETH flows."""
    deposits = [e for e in events if e.kind is EventKind.DEPOSIT and e.amount_in.asset == STETH]
    withdraws = [e for e in events if e.kind is EventKind.WITHDRAW and e.amount_in.asset == STETH]
    if not deposits or not withdraws:
        raise DomainError("realized APR needs at least one stETH deposit and one withdraw")
    borrows = [e for e in events if e.kind is EventKind.BORROW and e.amount_in.asset == ETH]
    repays = [e for e in events if e.kind is EventKind.REPAY and e.amount_in.asset == ETH]

    def total(evs):
        return float(sum((e.amount for e in evs), Decimal(0)))

    return actual_apr(
        total(deposits),
        total(withdraws),
        total(borrows),
        total(repays),
        price_at_last_withdraw,
        min(e.block for e in deposits),
        max(e.block for e in withdraws),
        block_time=block_time,
    )


# Reports ------------------------------------------------------------------


def detect_address(events: Sequence[EventRecord], tolerance=DEFAULT_TOLERANCE, dust=DEFAULT_DUST) -> tuple[PositionTrace, list[PositionTrace]]:
    """Run both detectors; the match that starts first wins, the other is an alternate."""
    found = [t for t in (detect_direct(events, tolerance, dust), detect_indirect(events, tolerance, dust)) if t.strategy is not Strategy.NONE]
    if not found:
        address = events[0].address if events else ""
        return PositionTrace(address, Strategy.NONE), []
    found.sort(key=lambda t: t.window[0].position)
    return found[0], found[1:]


def build_report(
    records: Iterable[EventRecord],
    tolerance=DEFAULT_TOLERANCE,
    dust=DEFAULT_DUST,
    steth_price: float = 1.0,
    block_time: float = DEFAULT_BLOCK_TIME,
) -> list[dict]:
    """One JSON-ready entry per address, sorted by address."""
    out = []
    for address, events in sorted(group_by_address(records).items()):
        trace, alternates = detect_address(events, tolerance, dust)
        try:
            apr = realized_apr(events, steth_price, block_time)
        except DomainError:
            apr = None
        detected = trace.strategy is not Strategy.NONE
        out.append(
            {
                "address": address,
                "strategy": trace.strategy.value,
                "n_loops": trace.n_loops,
                "principal": str(trace.principal) if detected else None,
                "total_invested": str(trace.total_invested) if detected else None,
                "realized_multiplier": str(trace.realized_multiplier) if detected else None,
                "realized_apr": apr,
                "alternates": [t.strategy.value for t in alternates],
            }
        )
    return out
