import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from occmc import ModelSpec, fit
from occmc.chains import PosteriorChains
from occmc.predict import (detection_probability, predict_nonspatial, predict_spatial,
                           write_predictions)
from occmc.simulate import sim_ms_occ, sim_occ


def fake_chains(draws, spatial=False, n_neighbors=5, gp="nngp"):
    spec = ModelSpec(spatial=spatial, n_neighbors=n_neighbors, gp=gp)
    p = draws["beta"].shape[-1]
    names = {"beta": ("intercept",) + tuple(f"c{i}" for i in range(1, p))}
    return PosteriorChains({k: v[None] for k, v in draws.items()}, spec, ("species",), ("1",),
                           names, "0" * 16)


def test_zero_coefficients_give_one_half():
    ch = fake_chains({"beta": np.zeros((10, 1, 3))})
    pred = predict_nonspatial(ch, np.zeros((4, 3)))
    np.testing.assert_array_equal(pred.psi, 0.5)


def test_column_mismatch_rejected():
    ch = fake_chains({"beta": np.zeros((10, 1, 2))})
    with pytest.raises(ValueError):
        predict_nonspatial(ch, np.zeros((4, 3)))
    with pytest.raises(ValueError):
        predict_nonspatial(ch, [[1.0, np.nan]])


def test_training_rows_reproduce_stored_psi():
    sim = sim_occ(40, 3, (0.2, 0.8), (0.0,), seed=1)
    ch = fit(ModelSpec(n_iter=60, n_burn=20), sim.dataset)
    pred = predict_nonspatial(ch, sim.dataset.occurrence.X)
    np.testing.assert_allclose(pred.psi, ch.pooled("psi"), rtol=1e-12)


def test_occupancy_draws_track_probability():
    rng = np.random.default_rng(2)
    ch = fake_chains({"beta": rng.normal(0, 0.3, (4000, 1, 2))})
    pred = predict_nonspatial(ch, np.column_stack([np.ones(5), np.linspace(-2, 2, 5)]), seed=3)
    se = np.sqrt(0.25 / pred.z.shape[0])
    assert np.all(np.abs(pred.z.mean(0) - pred.psi.mean(0)) < 4 * se)


def test_prediction_reproducible():
    ch = fake_chains({"beta": np.random.default_rng(4).normal(size=(50, 1, 2))})
    X = np.ones((3, 2))
    np.testing.assert_array_equal(predict_nonspatial(ch, X, seed=5).z,
                                  predict_nonspatial(ch, X, seed=5).z)


def spatial_setup(J=30, D=3000, seed=6):
    rng = np.random.default_rng(seed)
    sim = sim_occ(J, 2, (0.0,), (0.0,), seed=seed)
    w = np.broadcast_to(rng.normal(size=J), (D, 1, J)).copy()
    draws = {"beta": np.full((D, 1, 1), 0.3), "w": w, "sigma2": np.full((D, 1), 1.5),
             "phi": np.full((D, 1), 4.0)}
    return sim.dataset, draws


def kriging(coords, w, new, sigma2, phi):
    R = np.exp(-phi * np.linalg.norm(coords[:, None] - coords[None], axis=-1))
    c = np.exp(-phi * np.linalg.norm(coords - new, axis=-1))
    b = np.linalg.solve(R, c)
    return b @ w, sigma2 * (1 - b @ c)


@pytest.mark.parametrize("gp,m", [("full", None), ("nngp", 29), ("nngp", 5)])
def test_new_site_conditional_matches_kriging(gp, m):
    ds, draws = spatial_setup()
    ch = fake_chains(draws, spatial=True, gp=gp, n_neighbors=m or 5)
    coords = ds.sites.coords
    new = np.array([[0.43, 0.61]])
    pred = predict_spatial(ch, ds, np.ones((1, 1)), new, seed=7)
    use = np.arange(30)
    if gp == "nngp":
        use = np.argsort(np.linalg.norm(coords - new, axis=1))[:m]
    mean, var = kriging(coords[use], draws["w"][0, 0, use], new[0], 1.5, 4.0)
    x = (pred.w[:, 0, 0] - mean) / np.sqrt(var)
    assert stats.kstest(x, "norm").pvalue > 0.01
    np.testing.assert_allclose(pred.psi, expit(0.3 + pred.w))


def test_observed_location_copies_effect():
    ds, draws = spatial_setup(D=20)
    ch = fake_chains(draws, spatial=True)
    at = ds.sites.coords[[4, 11]]
    for gp in ("nngp", "full"):
        pred = predict_spatial(ch, ds, np.ones((2, 1)), at, gp=gp)
        np.testing.assert_array_equal(pred.w[:, 0], draws["w"][:, 0, [4, 11]])


def test_far_site_reverts_to_prior():
    ds, draws = spatial_setup()
    ch = fake_chains(draws, spatial=True)
    pred = predict_spatial(ch, ds, np.ones((1, 1)), [[50.0, 50.0]], seed=8)
    assert stats.kstest(pred.w[:, 0, 0] / np.sqrt(1.5), "norm").pvalue > 0.01


def test_spatial_prediction_needs_spatial_fit():
    ds, draws = spatial_setup(D=5)
    with pytest.raises(ValueError):
        predict_spatial(fake_chains({"beta": draws["beta"]}), ds, np.ones((1, 1)), [[0, 0]])


def test_detection_probability():
    ch = fake_chains({"beta": np.zeros((6, 1, 1))})
    ch.draws["alpha.1"] = np.zeros((1, 6, 1, 2))
    ch.draws["alpha.1"][..., 1] = np.log(3.0)
    p = detection_probability(ch, "1", np.array([[1.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(p[:, 0], np.broadcast_to([0.75, 0.5], (6, 2)))


def test_prediction_files(tmp_path):
    sim = sim_ms_occ(15, 2, 3, (0.0, 0.5), 1.0, (0.0,), 1.0, seed=9)
    ch = fit(ModelSpec(model="msom", n_iter=40, n_burn=20), sim.dataset)
    pred = predict_nonspatial(ch, sim.dataset.occurrence.X[:4])
    paths = write_predictions(tmp_path / "pred.csv", sim.dataset.sites.coords[:4], pred,
                              ch.species)
    rows = paths[0].read_text().splitlines()
    assert rows[0].startswith("site_id,x,y,species,psi_mean")
    assert len(rows) == 1 + 4 * 3
    rich = paths[1].read_text().splitlines()
    assert len(rich) == 5
    means = [float(r.split(",")[3]) for r in rich[1:]]
    np.testing.assert_allclose(means, pred.richness().mean(0))
