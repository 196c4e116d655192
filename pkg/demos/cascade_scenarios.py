"""Run the bundled stress scenarios and summarize each cascade."""

from lsd_cascade.sim import Cohort, load_scenario, resolve_scenario, run_simulation

NAMES = [
    "sq1",
    "sq2_pair/with_leverage",
    "sq2_pair/first_loop_only",
    "sq3_pair/ordinary_only",
    "sq3_pair/with_leverage",
    "sq4_pair/no_deleverage",
    "sq4_pair/deleverage",
]

print(f"{'scenario':<26} {'rounds':>6} {'final price':>11} {'lev liq':>7} {'ord liq':>7} {'volume ETH':>12}")
for name in NAMES:
    r = run_simulation(load_scenario(resolve_scenario(name)))
    print(
        f"{name:<26} {r.n_rounds:>6} {r.terminal_price:>11.4f} {r.liquidated(Cohort.LEVERAGE):>7}"
        f" {r.liquidated(Cohort.ORDINARY):>7} {r.total_liquidated_eth / 10**18:>12,.0f}"
    )
