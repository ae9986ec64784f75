"""The spurious pre-trend of the naive event study.

With effects that grow with duration, the naive regression compares the lead
against a baseline contaminated by treated periods, and the lead dips below
zero. The two-stage version has no such dip.
"""

import numpy as np

from stagedid import PRESETS, EventStudySpec, naive_event_study, simulate_panel, true_estimands, two_stage_event_study

cfg = PRESETS["sim1"]
spec = EventStudySpec(leads=1, max_duration=4)
naive, two_stage = [], []
for rep in range(100):
    p = simulate_panel(cfg, rep)
    naive.append(naive_event_study(p, spec).point)
    two_stage.append(two_stage_event_study(p, spec).point)

labels = naive_event_study(simulate_panel(cfg, 0), spec).labels
truth = true_estimands(cfg)["by_duration"]
print(f"{'term':<6}{'true':>8}{'naive':>8}{'2-stage':>9}")
for i, lab in enumerate(labels):
    r = int(lab[2:])
    t = truth.get(r, 0.0) if r > 0 else 0.0
    print(f"{lab:<6}{t:8.3f}{np.mean(naive, axis=0)[i]:8.3f}{np.mean(two_stage, axis=0)[i]:9.3f}")
