"""Screening a two-colour tag array for dead/alive strains and ratios."""

import math

import numpy as np

from probelevel.evaluation import roc
from probelevel.sim import TagSimConfig, generate_tags
from probelevel.tagscreen import naive_log_ratio, screen_tags

ds, truth = generate_tags(TagSimConfig(), seed=1)
mix, results = screen_tags(ds)
for h in ("R", "G"):
    m = getattr(mix, h)
    print(f"{h}: dead {m.dead_mean:.2f} alive {m.alive_mean:.2f} pi_alive {m.pi_alive:.2f}")

llr = np.array([r.llr for r in results])
naive = naive_log_ratio(ds)
task = np.isin(truth.category, ["dead_alive", "alive_alive", "dead_dead"])
pos = truth.category == "dead_alive"
print(f"dead/alive AUC: llr {roc(llr[task], pos[task]).auc:.4f}, "
      f"|naive| {roc(np.abs(naive[task]), pos[task]).auc:.4f}")

lr = np.array([r.log_ratio for r in results])
sel = (truth.category == "ratio") & np.isfinite(lr)
print(f"ratio-2 tags: MLE mean {lr[sel].mean():.3f} (truth {math.log(2):.3f}), "
      f"naive mean {naive[sel].mean():.3f}")
