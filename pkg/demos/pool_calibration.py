"""Fit the Curve pool amplification to the observed post-dump stETH price."""

from dataclasses import replace
from decimal import Decimal

from lsd_cascade.amm import (
    FORK_RESERVE_ETH,
    FORK_RESERVE_STETH,
    REFERENCE_DUMP_STETH,
    REFERENCE_POST_DUMP_RATE,
    PoolState,
    calibrate_amplification,
    post_dump_rate,
    spot_rate,
)
from lsd_cascade.fixedpoint import WAD

seed = PoolState(FORK_RESERVE_ETH, FORK_RESERVE_STETH, Decimal(1))
cal = calibrate_amplification(REFERENCE_POST_DUMP_RATE, seed, REFERENCE_DUMP_STETH)
pool = replace(seed, amplification=cal.amplification)
print(f"fitted amplification {cal.amplification}, achieved rate {cal.achieved_rate:.6f}")
print(f"spot rate before the dump {spot_rate(pool):.6f}")
for dump in (25_000, 50_000, 100_000, 170_000, 250_000):
    print(f"dump {dump:>7,} stETH -> rate {post_dump_rate(pool, dump * WAD):.4f}")
