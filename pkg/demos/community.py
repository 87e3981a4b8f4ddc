"""
Multispecies occupancy
======================

Eight species share community-level priors on their coefficients.
The community means and variances summarize the assemblage, and
predicted richness follows from the per-species occupancy draws.
"""
import numpy as np

from occmc import ModelSpec, fit, sim_ms_occ
from occmc.predict import predict_nonspatial

sim = sim_ms_occ(200, 3, 8, mu_beta=(0.0, 0.5), tau2_beta=1.0, mu_alpha=(0.0, -0.5),
                 tau2_alpha=0.5, seed=6)
ds = sim.dataset
ch = fit(ModelSpec(model="msom", n_iter=3000, n_burn=1000, n_chains=2, seed=7), ds)

for name in ("mu_beta", "tau2_beta", "mu_alpha", "tau2_alpha"):
    med = np.median(ch.pooled(name), axis=0)
    print(f"{name:>10}: {np.round(med, 2)}")

# species-level slopes shrink toward the community mean
b = np.median(ch.pooled("beta"), axis=0)[:, 1]
print("true slopes  ", np.round(sim.truth["beta"][:, 1], 2))
print("fitted slopes", np.round(b, 2))

# richness along a covariate gradient
x = np.linspace(-2, 2, 5)
pred = predict_nonspatial(ch, np.column_stack([np.ones(5), x]), seed=8)
rich = pred.richness()
for xi, m, (lo, hi) in zip(x, rich.mean(0), np.quantile(rich, [0.025, 0.975], axis=0).T):
    print(f"covariate {xi:+.1f}: richness {m:.1f} ({lo:.0f}, {hi:.0f})")
