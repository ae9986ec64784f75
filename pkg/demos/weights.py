"""Where the DiD regression puts its weight on sim-1.

Long-duration cells of the early cohort get the smallest weights, so when
effects grow with duration the regression coefficient falls short of the
average effect.
"""

import pandas as pd

from stagedid import PRESETS, aggregated_att, did_regression, did_weights, implied_estimand, simulate_panel

cfg = PRESETS["sim1"].replace(noise_sd=0.0, unit_sd=0.0)
panel = simulate_panel(cfg, 0)
w = did_weights(panel)
print(pd.DataFrame(w.records()).round(3).to_string(index=False))
n_neg, mass = w.negative_summary()
print(f"\n{n_neg} negative cells, total mass {mass:.3f}")

grid = aggregated_att(panel)[1]
print(f"\nsum of weights        {w.weight.sum():.3f}")
print(f"DiD coefficient       {did_regression(panel).point:.3f}")
print(f"implied by weights    {implied_estimand(w, grid):.3f}")
print(f"average effect        {aggregated_att(panel)[0].point:.3f}")
