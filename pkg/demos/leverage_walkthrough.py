"""How leverage, health factor and APR evolve as loops are added."""

from lsd_cascade.analytics import (
    AaveRiskParams,
    MarketMode,
    PriceFrame,
    RateSet,
    build_schedule,
    health_factor,
    max_price_drop,
    multiplier_limit,
    net_apr,
)

params = AaveRiskParams(0.69, 0.81)
prices = PriceFrame()
rates = RateSet(staking_apr=0.04, deposit_apr=0.001, borrow_apr=0.025)

print(f"{'loops':>5} {'multiplier':>10} {'HF':>8} {'net APR':>8}")
for n in range(0, 11):
    s = build_schedule(100.0, n, params, prices)
    hf = health_factor(s, params, prices)
    apr = net_apr(s, rates, params, prices).net
    print(f"{n:>5} {s.multiplier:>10.4f} {hf:>8.4f} {apr:>8.4%}")

print(f"limit as loops grow: {multiplier_limit(params, prices):.4f}")
print(f"price drop that liquidates any looped position: {max_price_drop(params):.2%}")

indirect = PriceFrame(p_secondary_t0=0.98, market_mode=MarketMode.INDIRECT)
s = build_schedule(100.0, 10, params, indirect)
print(f"buying stETH at 0.98 on the secondary market, 10 loops: multiplier {s.multiplier:.4f}")
