import json
import random
from decimal import Decimal
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsd_cascade.detect import (
    Amount,
    EventKind,
    EventRecord,
    Strategy,
    approx_equal,
    build_report,
    count_loops,
    detect_address,
    detect_direct,
    detect_indirect,
    group_by_address,
    parse_event_lines,
    parse_events,
    realized_apr,
)
from lsd_cascade.errors import DomainError, EventSchemaError, ValidationError

DATA = Path(__file__).parent / "data"
ADDR = "0xabc"


def E(v):
    return Amount("ETH", Decimal(str(v)))


def S(v):
    return Amount("stETH", Decimal(str(v)))


class Seq:
    """Builds one address's events with increasing positions."""

    def __init__(self, address=ADDR, block=100):
        self.address = address
        self.block = block
        self.events = []

    def add(self, kind, amount_in, amount_out=None):
        self.events.append(EventRecord(self.address, kind, self.block, len(self.events), amount_in, amount_out))
        return self

    def stake(self, eth, steth=None):
        return self.add(EventKind.STAKE, E(eth), S(steth if steth is not None else eth))

    def swap_in(self, eth, steth):
        return self.add(EventKind.SWAP, E(eth), S(steth))

    def swap_out(self, steth, eth):
        return self.add(EventKind.SWAP, S(steth), E(eth))

    def deposit(self, v):
        return self.add(EventKind.DEPOSIT, S(v))

    def borrow(self, v):
        return self.add(EventKind.BORROW, E(v))

    def withdraw(self, v):
        return self.add(EventKind.WITHDRAW, S(v))

    def repay(self, v):
        return self.add(EventKind.REPAY, E(v))


# Parsing ------------------------------------------------------------------


SIX_KINDS = [
    '{"address": "0x1", "kind": "stake", "block": 5, "log_index": 0, "amount_in": {"asset": "ETH", "value": "1.5"}, "amount_out": {"asset": "stETH", "value": "1.499999999999999999"}}',
    '{"address": "0x1", "kind": "deposit", "block": 5, "log_index": 1, "amount_in": {"asset": "stETH", "value": "1.499999999999999999"}, "amount_out": null}',
    '{"address": "0x1", "kind": "borrow", "block": 6, "log_index": 0, "amount_in": {"asset": "ETH", "value": "1"}, "amount_out": null}',
    '{"address": "0x1", "kind": "swap", "block": 6, "log_index": 1, "amount_in": {"asset": "ETH", "value": "1"}, "amount_out": {"asset": "stETH", "value": "1.01"}}',
    '{"address": "0x1", "kind": "repay", "block": 7, "log_index": 0, "amount_in": {"asset": "ETH", "value": "1.02"}, "amount_out": null}',
    '{"address": "0x1", "kind": "withdraw", "block": 7, "log_index": 1, "amount_in": {"asset": "stETH", "value": "1.6"}, "amount_out": null}',
]


def test_empty_input():
    assert parse_event_lines([]).records == []
    assert parse_event_lines(["", "  \n"]).records == []


def test_six_kinds_round_trip():
    parsed = parse_event_lines(SIX_KINDS)
    assert parsed.errors == []
    assert [r.kind for r in parsed.records] == [
        EventKind.STAKE,
        EventKind.DEPOSIT,
        EventKind.BORROW,
        EventKind.SWAP,
        EventKind.REPAY,
        EventKind.WITHDRAW,
    ]
    for line, rec in zip(SIX_KINDS, parsed.records):
        assert rec.to_json() == json.loads(line)
    assert parsed.records[0].amount_out.value == Decimal("1.499999999999999999")


def test_shuffled_lines_sort_identically():
    lines = list(SIX_KINDS)
    random.Random(3).shuffle(lines)
    assert parse_event_lines(lines).records == parse_event_lines(SIX_KINDS).records


@pytest.mark.parametrize(
    "line, fragment",
    [
        ("not json", "invalid JSON"),
        ("[1]", "JSON object"),
        ('{"address": "", "kind": "stake"}', "address"),
        ('{"address": "0x1", "kind": "mint", "block": 1, "log_index": 0}', "unknown kind"),
        ('{"address": "0x1", "kind": "borrow", "block": -1, "log_index": 0}', "block"),
        ('{"address": "0x1", "kind": "borrow", "block": 1, "log_index": 0, "amount_in": {"asset": "DAI", "value": "1"}}', "asset"),
        ('{"address": "0x1", "kind": "borrow", "block": 1, "log_index": 0, "amount_in": {"asset": "ETH", "value": 1}}', "decimal string"),
        ('{"address": "0x1", "kind": "borrow", "block": 1, "log_index": 0, "amount_in": {"asset": "ETH", "value": "-1"}}', "positive"),
        ('{"address": "0x1", "kind": "swap", "block": 1, "log_index": 0, "amount_in": {"asset": "ETH", "value": "1"}}', "amount_out"),
        ('{"address": "0x1", "kind": "stake", "block": 1, "log_index": 0, "amount_in": {"asset": "stETH", "value": "1"}, "amount_out": {"asset": "ETH", "value": "1"}}', "stake"),
    ],
)
def test_schema_errors(line, fragment):
    parsed = parse_event_lines([SIX_KINDS[0], line])
    assert len(parsed.records) == 1
    assert len(parsed.errors) == 1
    assert parsed.errors[0].line_no == 2
    assert fragment in parsed.errors[0].message
    with pytest.raises(EventSchemaError):
        parse_event_lines([SIX_KINDS[0], line], strict=True)


def test_duplicate_position_rejected():
    parsed = parse_event_lines([SIX_KINDS[0], SIX_KINDS[0]])
    assert len(parsed.records) == 1
    assert "duplicate" in parsed.errors[0].message


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        parse_events(tmp_path / "missing.jsonl")


# Detection ----------------------------------------------------------------


def test_direct_basic():
    seq = Seq().stake(10).deposit(10).borrow(6.9).stake(6.9).events
    trace = detect_direct(seq)
    assert trace.strategy is Strategy.DIRECT
    assert trace.n_loops == 1
    assert trace.principal == 10
    assert trace.total_invested == Decimal("16.9")
    assert trace.realized_multiplier == Decimal("1.69")
    assert list(trace.matched_sequence) == seq
    assert detect_indirect(seq).strategy is Strategy.NONE


def test_direct_needs_deposit_above_borrow():
    seq = Seq().stake(10).deposit(10).borrow(11).stake(11).events
    assert detect_direct(seq).strategy is Strategy.NONE


def test_direct_order_violation():
    seq = Seq().deposit(10).stake(10).borrow(6.9).stake(6.9).events
    assert detect_direct(seq).strategy is Strategy.NONE


def test_indirect_basic():
    seq = Seq().swap_in(100, 103).deposit(103).borrow(69).swap_in(69, 71).events
    trace = detect_indirect(seq)
    assert trace.strategy is Strategy.INDIRECT
    assert trace.n_loops == 1
    assert trace.principal == 100
    assert trace.total_invested == 169
    assert detect_direct(seq).strategy is Strategy.NONE


def test_indirect_direction():
    seq = Seq().swap_out(103, 100).deposit(103).borrow(69).swap_in(69, 71).events
    assert detect_indirect(seq).strategy is Strategy.NONE


def test_indirect_borrow_mismatch():
    seq = Seq().swap_in(100, 103).deposit(103).borrow(69).swap_in(72, 74).events
    assert detect_indirect(seq).strategy is Strategy.NONE
    # within tolerance it matches
    seq = Seq().swap_in(100, 103).deposit(103).borrow(69).swap_in(69.3, 71).events
    assert detect_indirect(seq).strategy is Strategy.INDIRECT


def test_tolerance_edges():
    seq = Seq().stake(10, 10).deposit(10.04).borrow(6.9).stake(6.9).events
    assert detect_direct(seq, tolerance=Decimal("0.005")).strategy is Strategy.DIRECT
    assert detect_direct(seq, tolerance=Decimal("0.003")).strategy is Strategy.NONE
    assert detect_direct(seq, tolerance=0).strategy is Strategy.NONE
    with pytest.raises(ValidationError):
        detect_direct(seq, tolerance=Decimal("0.06"))
    assert approx_equal(Decimal(1), Decimal(1) + Decimal("1e-10"), Decimal(0))


def test_earliest_match_wins():
    seq = Seq().stake(5).stake(10).deposit(10).borrow(6.9).stake(6.9).events
    trace = detect_direct(seq)
    assert trace.window[0] == seq[1]
    assert trace.principal == 10
    # the whole stake/deposit/borrow sequence is kept
    assert trace.matched_sequence[0] == seq[0]


def test_detect_address_picks_earlier_strategy():
    s = Seq()
    s.swap_in(100, 103).deposit(103).borrow(69).swap_in(69, 71)
    s.stake(10).deposit(10).borrow(6.9).stake(6.9)
    trace, alternates = detect_address(s.events)
    assert trace.strategy is Strategy.INDIRECT
    assert [t.strategy for t in alternates] == [Strategy.DIRECT]


def test_undetected_address():
    trace, alternates = detect_address(Seq().deposit(1).borrow(0.5).events)
    assert trace.strategy is Strategy.NONE
    assert alternates == []
    assert trace.realized_multiplier is None
    with pytest.raises(DomainError):
        count_loops(trace)


# Loop counting ------------------------------------------------------------


def nine_loops():
    s = Seq()
    amount = Decimal(5000)
    for _ in range(9):
        s.stake(amount).deposit(amount)
        amount = (amount * Decimal("0.7")).quantize(Decimal("1e-12"))
        s.borrow(amount)
    s.stake(amount)
    return s.events


def test_nine_loops():
    trace = detect_direct(nine_loops())
    assert count_loops(trace) == 9
    assert trace.n_loops == 9
    assert trace.realized_multiplier == pytest.approx(Decimal("3.239"), abs=Decimal("0.001"))


def test_withdraw_between_triples():
    s = Seq().stake(10).deposit(10).borrow(6.9).withdraw(1).stake(6.9).deposit(6.9).borrow(4.7).stake(4.7)
    assert count_loops(detect_direct(s.events)) == 2


def test_interleaved_triple_still_counts_one():
    s = Seq().stake(10).borrow(1).deposit(10).borrow(6.9).stake(6.9)
    trace = detect_direct(s.events)
    assert trace.strategy is Strategy.DIRECT
    assert trace.n_loops == 1


# Realized APR ---------------------------------------------------------------


def test_realized_apr_one_year():
    s = Seq(block=0).deposit(100).borrow(50)
    s.block = 2_628_000
    s.repay(51).withdraw(103)
    assert realized_apr(s.events, 1.0) == pytest.approx(0.02, rel=1e-12)


def test_realized_apr_needs_withdraw():
    with pytest.raises(DomainError):
        realized_apr(Seq().deposit(1).events, 1.0)


# Golden corpus --------------------------------------------------------------


def test_golden_corpus_labels():
    records = parse_events(DATA / "golden_events.jsonl").records
    labels = json.loads((DATA / "golden_labels.json").read_text())
    got = {row["address"]: row["strategy"] for row in build_report(records)}
    assert got == labels


def test_golden_report_byte_exact():
    records = parse_events(DATA / "golden_events.jsonl").records
    text = json.dumps(build_report(records), indent=2) + "\n"
    assert text == (DATA / "golden_report.json").read_text()


def test_group_by_address_sorts():
    records = parse_events(DATA / "golden_events.jsonl").records
    groups = group_by_address(records)
    assert len(groups) == 8
    for seq in groups.values():
        assert [e.position for e in seq] == sorted(e.position for e in seq)


# Properties -----------------------------------------------------------------


def perturb(events, rng, scale):
    out = []
    for ev in events:
        def jiggle(a):
            if a is None:
                return None
            factor = Decimal(1) + Decimal(str(rng.uniform(-scale, scale)))
            return Amount(a.asset, (a.value * factor).quantize(Decimal("1e-18")))
        out.append(EventRecord(ev.address, ev.kind, ev.block, ev.log_index, jiggle(ev.amount_in), jiggle(ev.amount_out)))
    return out


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t1=st.decimals("0", "0.05", places=4), t2=st.decimals("0", "0.05", places=4))
def test_tolerance_monotone(seed, t1, t2):
    lo, hi = min(t1, t2), max(t1, t2)
    rng = random.Random(seed)
    base = Seq().stake(10).deposit(10).borrow(6.9).stake(6.9).deposit(6.9).borrow(4.7).stake(4.7).events
    events = perturb(base, rng, 0.02)
    for detect in (detect_direct, detect_indirect):
        if detect(events, tolerance=lo).strategy is not Strategy.NONE:
            assert detect(events, tolerance=hi).strategy is not Strategy.NONE


def test_strategy_exclusive_per_window():
    records = parse_events(DATA / "golden_events.jsonl").records
    for events in group_by_address(records).values():
        d, i = detect_direct(events), detect_indirect(events)
        if d.strategy is not Strategy.NONE and i.strategy is not Strategy.NONE:
            assert set(d.window).isdisjoint(i.window[:1] + i.window[3:])


def test_report_deterministic():
    records = parse_events(DATA / "golden_events.jsonl").records
    assert json.dumps(build_report(records)) == json.dumps(build_report(list(reversed(records))))
