"""Classify the addresses of the bundled test event log."""

from pathlib import Path

from lsd_cascade.detect import build_report, parse_events

events = Path(__file__).resolve().parents[1] / "tests" / "data" / "golden_events.jsonl"
for row in build_report(parse_events(events).records):
    print(f"{row['address']}  {row['strategy']:<8}  loops={row['n_loops']}  multiplier={row['realized_multiplier']}")
