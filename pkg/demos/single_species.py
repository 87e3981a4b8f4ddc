"""
Single-species occupancy with imperfect detection
=================================================

Simulate one species at 300 sites surveyed three times, fit the
nonspatial model, and check it.
"""
import numpy as np

from occmc import ModelSpec, fit, sim_occ
from occmc.assessment import format_summary, ppc, summary, waic

# occurrence rises with the covariate; detection falls with the visit covariate
sim = sim_occ(300, 3, beta=(0.3, -0.6), alpha=(0.2, 0.7), seed=1)
ds = sim.dataset
y = ds.sources[0].detection.y[0]
print(f"naive occupancy {y.any(axis=1).mean():.2f}, true {sim.truth['z'].mean():.2f}")

# three chains; draws before n_burn are discarded
chains = fit(ModelSpec(n_iter=3000, n_burn=1000, n_chains=3, seed=2), ds)
print(format_summary(summary(chains)))

# the detection model corrects the naive estimate
psi = chains.pooled("psi")[:, 0]
print(f"estimated occupied fraction {chains.pooled('z')[:, 0].mean():.2f}")
print(f"mean occupancy probability {psi.mean():.2f}")

# model fit: WAIC and a posterior predictive check binned by site
w = waic(chains, ds)
print(f"WAIC {w.waic:.1f} (elpd {w.elpd:.1f}, pD {w.pD:.1f})")
for stat in ("chisq", "ftukey"):
    print(f"{stat} Bayesian p-value {ppc(chains, ds, stat).bayesian_p:.2f}")
