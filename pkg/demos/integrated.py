"""
Integrating several detection data sets
=======================================

Three surveys of the same species overlap in space and differ in
detection. An integrated spatial model shares one occurrence process
between them; sites no survey visited are predicted from their
neighbors.
"""
import numpy as np

from occmc.predict import predict_spatial
from occmc.samplers import fit
from occmc.simulate import preset

# 900 grid sites; the three sources cover 563, 338 and 113 of them
sim, spec = preset("iom-40k", scale=900 / 40_000, seed=9)
ds = sim.dataset
surveyed = ds.covered_sites()
unsurveyed = np.setdiff1d(np.arange(ds.n_sites), surveyed)
print(f"{surveyed.size} surveyed sites, {unsurveyed.size} without data")

train = ds.subset(surveyed)
ch = fit(spec.replace(n_iter=4000, n_burn=2000, n_thin=2, seed=10), train)

for s, t in zip(ds.sources, sim.truth["sources"]):
    med = np.median(ch.pooled(f"alpha.{s.source_id}")[:, 0], axis=0)
    print(f"source {s.source_id}: detection {np.round(med, 2)}, true {t['alpha']}")
print("occurrence", np.round(np.median(ch.pooled("beta")[:, 0], axis=0), 2),
      "true", sim.truth["beta"])

pred = predict_spatial(ch, train, ds.occurrence.X[unsurveyed], ds.sites.coords[unsurveyed],
                       seed=11)
r = np.corrcoef(pred.psi.mean(0)[0], sim.truth["psi"][unsurveyed])[0, 1]
print(f"corr(predicted, true psi) at unsurveyed sites = {r:.2f}")
