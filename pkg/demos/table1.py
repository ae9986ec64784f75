"""Monte Carlo comparison of the estimators on both simulated designs."""

import sys

from stagedid import PRESETS, monte_carlo, true_estimands
from stagedid.simulation import DEFAULT_SUITE

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 250
for name in ("sim1", "sim2"):
    cfg = PRESETS[name]
    truth = true_estimands(cfg)
    res = monte_carlo(cfg, reps, suite=list(DEFAULT_SUITE))
    s = res.summary().set_index(["estimator", "estimand"])
    print(f"\n{name}: {reps} replications")
    print(f"  {'true':<12}{truth['overall']:8.3f}")
    for est in ("did", "aggregated", "two_stage"):
        row = s.loc[(est, "overall")]
        print(f"  {est:<12}{row['mean']:8.3f}  ({row['sd']:.3f})")
    print(f"  {'true':<12}{truth['capped(4)']:8.3f}   first four periods")
    for est in ("aggregated", "stacked", "two_stage"):
        row = s.loc[(est, "capped(4)")]
        print(f"  {est:<12}{row['mean']:8.3f}  ({row['sd']:.3f})")
