"""
Spatial occupancy with a nearest-neighbor Gaussian process
==========================================================

Occurrence has a spatially smooth residual. A spatial fit with ten
neighbors is compared against a nonspatial fit, then used to map
occupancy on a grid of new locations.
"""
import numpy as np

from occmc import ModelSpec, SpatialSim, fit, sim_occ
from occmc.assessment import kfold_cv, waic
from occmc.predict import predict_spatial

sim = sim_occ(300, 3, beta=(0.0, 0.5), alpha=(0.5, -0.5),
              spatial=SpatialSim("exponential", sigma2=3.0, phi=6.0), seed=3)
ds = sim.dataset

specs = {
    "spatial": ModelSpec(spatial=True, n_neighbors=10, n_iter=3000, n_burn=1500, seed=4),
    "nonspatial": ModelSpec(n_iter=3000, n_burn=1500, seed=4),
}
fits = {}
for name, spec in specs.items():
    fits[name] = ch = fit(spec, ds)
    cv = kfold_cv(spec, ds, k=4)
    print(f"{name:>10}: WAIC {waic(ch, ds).waic:7.1f}  4-fold deviance {cv.total:7.1f}")

sp = fits["spatial"]
for name in ("sigma2", "phi"):
    lo, med, hi = np.quantile(sp.pooled(name), [0.025, 0.5, 0.975])
    print(f"{name}: {med:.2f} ({lo:.2f}, {hi:.2f})")

# fitted spatial effects against the truth
w_hat = sp.pooled("w")[:, 0].mean(0)
print(f"corr(fitted w, true w) = {np.corrcoef(w_hat, sim.truth['w'])[0, 1]:.2f}")

# occupancy on a 20 x 20 grid with the covariate held at zero
g = (np.arange(20) + 0.5) / 20
grid = np.array([(x, y) for y in g for x in g])
X = np.column_stack([np.ones(len(grid)), np.zeros(len(grid))])
pred = predict_spatial(sp, ds, X, grid, seed=5)
psi = pred.psi.mean(0)[0].reshape(20, 20)
for row in psi[::-4]:
    print(" ".join(f"{v:.2f}" for v in row[::4]))
