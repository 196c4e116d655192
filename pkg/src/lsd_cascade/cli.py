"""Command-line front end: ``lsd-cascade {analyze,detect,simulate,compare,calibrate}``.

Exit codes: 0 success, 1 validation, 2 I/O, 3 numeric failure (including an
unreachable calibration target).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Sequence

from . import __version__
from .amm import (
    DEFAULT_FEE,
    FORK_RESERVE_ETH,
    FORK_RESERVE_STETH,
    REFERENCE_DUMP_STETH,
    REFERENCE_POST_DUMP_RATE,
    PoolState,
    calibrate_amplification,
    save_pool,
)
from .analytics import (
    NO_DEBT_LABEL,
    AaveRiskParams,
    MarketMode,
    PriceFrame,
    RateSet,
    build_schedule,
    health_factor,
    load_param_schedule,
    max_price_drop,
    net_apr,
    params_at_block,
)
from .detect import DEFAULT_DUST, DEFAULT_TOLERANCE, build_report, parse_events
from .errors import DomainError, InsufficientLiquidity, NonConvergence, ValidationError
from .fixedpoint import format_wei, to_wei
from .sim import (
    ScenarioConfig,
    compare_scenarios,
    config_checksum,
    load_scenario,
    resolve_scenario,
    rounds_csv,
    run_simulation,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

STRICT_ENV = "LSD_CASCADE_STRICT"


class UsageError(ValidationError):
    pass


class UnreachableTarget(ArithmeticError):
    pass


# Manifest -----------------------------------------------------------------


@dataclass
class RunManifest:
    command: str
    input_paths: list[str]
    output_dir: str | None
    seed: dict = field(default_factory=dict)
    config_checksum: str = ""
    version: str = __version__

    def to_json(self) -> dict:
        return {
            "command": self.command,
            "input_paths": self.input_paths,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "version": self.version,
            "config_checksum": self.config_checksum,
        }


def _flags_checksum(flags: dict) -> str:
    return config_checksum(json.dumps(flags, sort_keys=True).encode())


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def _write_outputs(out_dir: Path, files: dict[str, str | dict | list], manifest: RunManifest) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, content in files.items():
        if isinstance(content, str):
            (out_dir / name).write_text(content, encoding="utf-8")
        else:
            _write_json(out_dir / name, content)
    _write_json(out_dir / "manifest.json", manifest.to_json())


# Flag parsing ---------------------------------------------------------------


def decimal_arg(text: str) -> Decimal:
    try:
        value = Decimal(text)
    except InvalidOperation:
        raise argparse.ArgumentTypeError(f"not a decimal number: {text!r}") from None
    if not value.is_finite():
        raise argparse.ArgumentTypeError(f"not a finite number: {text!r}")
    return value


def wei_arg(text: str) -> int:
    try:
        return to_wei(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _strict(args) -> bool:
    return bool(getattr(args, "strict", False)) or os.environ.get(STRICT_ENV, "") == "1"


# analyze --------------------------------------------------------------------


def _risk_params(args) -> AaveRiskParams:
    if args.block is not None:
        if args.ltv is not None or args.lt is not None:
            raise UsageError("--block picks LTV and LT from the parameter history; drop --ltv/--lt")
        return params_at_block(args.block)
    if args.ltv is None:
        raise UsageError("give --ltv (optionally with --lt) or --block")
    ltv = float(args.ltv)
    if args.lt is not None:
        lt = float(args.lt)
    else:
        known = [p for p in load_param_schedule() if p.ltv == ltv]
        if not known:
            raise UsageError(f"LTV {args.ltv} is not in the Aave parameter history; pass --lt explicitly")
        lt = known[-1].liquidation_threshold
    if ltv > lt:
        raise UsageError(f"--ltv {args.ltv} exceeds the liquidation threshold {lt}")
    return AaveRiskParams(ltv, lt)


def _fmt(x: float) -> str:
    return NO_DEBT_LABEL if x == float("inf") else f"{x:.6f}"


def cmd_analyze(args) -> int:
    risk = _risk_params(args)
    if args.principal <= 0:
        raise UsageError("--principal must be positive")
    if args.loops < 0:
        raise UsageError("--loops must be nonnegative")
    prices = PriceFrame(
        p_secondary_t0=float(args.p_secondary),
        p_aave_t0=float(args.p_aave),
        p_aave_tc=float(args.p_aave_tc) if args.p_aave_tc is not None else None,
        market_mode=MarketMode(args.mode),
    )
    schedule = build_schedule(float(args.principal), args.loops, risk, prices)
    rates = RateSet(float(args.staking_apr), float(args.deposit_apr), float(args.borrow_apr))
    apr = net_apr(schedule, rates, risk, prices)
    hf = health_factor(schedule, risk, prices)
    report = {
        "principal": str(args.principal),
        "n_loops": args.loops,
        "mode": args.mode,
        "ltv": risk.ltv,
        "lt": risk.liquidation_threshold,
        "total_invested": schedule.total_invested,
        "total_collateral": schedule.total_collateral,
        "total_debt": schedule.total_debt,
        "multiplier": schedule.multiplier,
        "health_factor": NO_DEBT_LABEL if hf == float("inf") else hf,
        "net_apr": apr.net,
        "apr_components": {
            "staking": apr.staking_component,
            "deposit": apr.deposit_component,
            "borrow": apr.borrow_component,
        },
        "max_price_drop": max_price_drop(risk),
    }
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        rows = [
            ("LTV / LT", f"{risk.ltv} / {risk.liquidation_threshold}"),
            ("total invested (A)", _fmt(schedule.total_invested)),
            ("total collateral (C)", _fmt(schedule.total_collateral)),
            ("total debt (B)", _fmt(schedule.total_debt)),
            ("multiplier", _fmt(schedule.multiplier)),
            ("health factor", _fmt(hf)),
            ("net APR", _fmt(apr.net)),
            ("max price drop", _fmt(max_price_drop(risk))),
        ]
        width = max(len(k) for k, _ in rows)
        for key, value in rows:
            print(f"{key:<{width}}  {value}")
    if args.output_dir:
        flags = {k: str(v) for k, v in vars(args).items() if k not in ("func", "output_dir", "json")}
        manifest = RunManifest("analyze", [], str(args.output_dir), {}, _flags_checksum(flags))
        _write_outputs(Path(args.output_dir), {"analysis.json": report}, manifest)
    return EXIT_OK


# detect ---------------------------------------------------------------------


def cmd_detect(args) -> int:
    tolerance = args.tolerance
    if not Decimal(0) <= tolerance <= Decimal("0.05"):
        raise UsageError("--tolerance must lie in [0, 0.05]")
    path = Path(args.events)
    raw = path.read_bytes()
    parsed = parse_events(path, strict=_strict(args))
    for err in parsed.errors:
        print(f"warning: {path}:{err.line_no}: {err.message}", file=sys.stderr)
    report = build_report(parsed.records, tolerance, args.dust, float(args.steth_price))
    text = json.dumps(report, indent=2) + "\n"
    if args.output_dir:
        manifest = RunManifest(
            "detect",
            [str(path)],
            str(args.output_dir),
            {"tolerance": str(tolerance), "dust": str(args.dust)},
            config_checksum(raw),
        )
        _write_outputs(Path(args.output_dir), {"detection.json": text}, manifest)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# simulate / compare ---------------------------------------------------------


def _seed_params(config: ScenarioConfig) -> dict:
    seed = {"pool": config.pool.to_json(), "initial_dump_steth": format_wei(config.initial_dump_steth)}
    if config.cohort is not None:
        seed["cohort"] = config.cohort.to_json()
    return seed


def cmd_simulate(args) -> int:
    path = resolve_scenario(args.scenario)
    if path.is_dir():
        raise UsageError(f"{path} is a scenario directory; use `compare`")
    raw = path.read_bytes()
    config = load_scenario(path)
    result = run_simulation(config)
    summary = result.summary_json()
    manifest = RunManifest("simulate", [str(path)], str(args.output_dir), _seed_params(config), config_checksum(raw))
    _write_outputs(Path(args.output_dir), {"rounds.csv": rounds_csv(result), "summary.json": summary}, manifest)
    print(
        f"{result.name}: {result.n_rounds} rounds ({result.termination_reason.value}), "
        f"price {result.initial_price:.4f} -> {result.terminal_price:.4f}, "
        f"liquidated {summary['liquidated_leverage']} leverage / {summary['liquidated_ordinary']} ordinary, "
        f"volume {summary['total_liquidated_eth']} ETH"
    )
    return EXIT_OK


def _scenario_paths(refs: Sequence[str]) -> list[Path]:
    paths = []
    for ref in refs:
        path = resolve_scenario(ref)
        if path.is_dir():
            found = sorted(path.glob("*.json"))
            if not found:
                raise FileNotFoundError(f"no scenario files in {path}")
            paths.extend(found)
        else:
            paths.append(path)
    return paths


def comparison_csv(comparison) -> str:
    header = ["round"]
    for name in comparison.names:
        header += [f"{name}_price", f"{name}_liq_count_lev", f"{name}_liq_count_ord", f"{name}_liq_volume_eth"]
    lines = [",".join(header)]
    for i in comparison.rounds:
        row = [str(i)]
        for name in comparison.names:
            price = comparison.prices[name][i]
            vol = comparison.volumes[name][i]
            lev = comparison.liquidated_leverage[name][i]
            ord_ = comparison.liquidated_ordinary[name][i]
            row += [
                "" if price is None else f"{price:.12f}",
                "" if lev is None else str(lev),
                "" if ord_ is None else str(ord_),
                "" if vol is None else format_wei(vol),
            ]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    paths = _scenario_paths(args.scenarios)
    raws = [p.read_bytes() for p in paths]
    configs = [load_scenario(p) for p in paths]
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        # fall back to file stems so that series stay distinguishable
        names = [p.stem for p in paths]
    comparison = compare_scenarios(list(zip(names, configs)), max_workers=args.workers)
    if comparison.seed_mismatch:
        print("warning: scenarios do not share a pool seed", file=sys.stderr)
    files: dict[str, str | dict] = {"comparison.csv": comparison_csv(comparison)}
    for name, result in zip(names, comparison.results):
        files[f"{name}.rounds.csv"] = rounds_csv(result)
    files["summary.json"] = {
        "seed_mismatch": comparison.seed_mismatch,
        "scenarios": [r.summary_json() | {"name": n} for n, r in zip(names, comparison.results)],
    }
    manifest = RunManifest(
        "compare",
        [str(p) for p in paths],
        str(args.output_dir),
        {n: _seed_params(c) for n, c in zip(names, configs)},
        config_checksum(b"".join(hashlib.sha256(r).digest() for r in raws)),
    )
    _write_outputs(Path(args.output_dir), files, manifest)
    for name, result in zip(names, comparison.results):
        print(
            f"{name}: {result.n_rounds} rounds, terminal price {result.terminal_price:.4f}, "
            f"volume {format_wei(result.total_liquidated_eth)} ETH"
        )
    return EXIT_OK


# calibrate ------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    target = float(args.target)
    if not 0 < target < 1:
        raise UsageError("--target must lie in (0, 1)")
    if args.min_amp < 1 or args.max_amp <= args.min_amp:
        raise UsageError("need 1 <= --min-amp < --max-amp")
    pool = PoolState(args.reserve_eth, args.reserve_steth, Decimal(args.min_amp), args.fee)
    cal = calibrate_amplification(target, pool, args.dump, (args.min_amp, args.max_amp), float(args.tolerance))
    print(f"amplification {cal.amplification}")
    print(f"achieved rate {cal.achieved_rate:.10f}")
    if args.pool_out:
        save_pool(PoolState(pool.reserve_eth, pool.reserve_steth, cal.amplification, pool.fee), args.pool_out)
    if not cal.reachable:
        raise UnreachableTarget(
            f"target {args.target} is outside the rates reachable with A in [{args.min_amp}, {args.max_amp}]"
        )
    return EXIT_OK


# entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lsd-cascade", description="Leverage-staking analytics and cascading-liquidation stress tests.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="loop schedule, HF and APR of one position")
    p.add_argument("--principal", type=decimal_arg, required=True, help="initial ETH")
    p.add_argument("--loops", type=int, required=True)
    p.add_argument("--ltv", type=decimal_arg, help="Aave LTV; LT is looked up if --lt is omitted")
    p.add_argument("--lt", type=decimal_arg, help="liquidation threshold")
    p.add_argument("--block", type=int, help="take LTV/LT from the Aave parameters in force at this block")
    p.add_argument("--mode", choices=[m.value for m in MarketMode], default="direct")
    p.add_argument("--p-secondary", type=decimal_arg, default=Decimal(1), help="secondary-market stETH price at open")
    p.add_argument("--p-aave", type=decimal_arg, default=Decimal(1), help="Aave stETH price at open")
    p.add_argument("--p-aave-tc", type=decimal_arg, help="Aave stETH price at evaluation (default: --p-aave)")
    p.add_argument("--staking-apr", type=decimal_arg, default=Decimal(0))
    p.add_argument("--deposit-apr", type=decimal_arg, default=Decimal(0))
    p.add_argument("--borrow-apr", type=decimal_arg, default=Decimal(0))
    p.add_argument("--json", action="store_true", help="print JSON instead of a table")
    p.add_argument("--output-dir", type=Path)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("detect", help="classify addresses in an event log")
    p.add_argument("events", help="JSON-lines event file")
    p.add_argument("--tolerance", type=decimal_arg, default=DEFAULT_TOLERANCE)
    p.add_argument("--dust", type=decimal_arg, default=DEFAULT_DUST)
    p.add_argument("--steth-price", type=decimal_arg, default=Decimal(1), help="stETH price for the realized APR")
    p.add_argument("--strict", action="store_true", help=f"fail on the first bad line (also {STRICT_ENV}=1)")
    p.add_argument("--output-dir", type=Path)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("simulate", help="run one scenario")
    p.add_argument("scenario", help="scenario file or bundled name (e.g. sq1)")
    p.add_argument("--output-dir", type=Path, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run scenarios side by side")
    p.add_argument("scenarios", nargs="+", help="scenario files, directories or bundled names (e.g. sq2_pair)")
    p.add_argument("--output-dir", type=Path, required=True)
    p.add_argument("--workers", type=int, default=None, help="parallel worker processes")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("calibrate", help="fit the pool amplification to a post-dump price")
    p.add_argument("--target", type=decimal_arg, default=Decimal(repr(REFERENCE_POST_DUMP_RATE)))
    p.add_argument("--reserve-eth", type=wei_arg, default=FORK_RESERVE_ETH)
    p.add_argument("--reserve-steth", type=wei_arg, default=FORK_RESERVE_STETH)
    p.add_argument("--dump", type=wei_arg, default=REFERENCE_DUMP_STETH, help="stETH sold before probing")
    p.add_argument("--fee", type=decimal_arg, default=DEFAULT_FEE)
    p.add_argument("--min-amp", type=int, default=1)
    p.add_argument("--max-amp", type=int, default=5000)
    p.add_argument("--tolerance", type=decimal_arg, default=Decimal("1e-6"))
    p.add_argument("--pool-out", type=Path, help="write the calibrated pool snapshot here")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, DomainError, LookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NonConvergence, InsufficientLiquidity, UnreachableTarget, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
