"""Toy-size datasets and specs, one per model class."""
from occmc import ModelSpec
from occmc.simulate import sim_int_occ, sim_ms_occ, sim_occ

TOY = {
    "ssom": (lambda: sim_occ(25, 3, (0., .5), (0., .5), seed=1, det_re={"obs": (4, 1.0)}),
             ModelSpec(det_random=("obs",))),
    "sp_ssom": (lambda: sim_occ(25, 3, (0., .5), (0., .5), seed=2),
                ModelSpec(spatial=True, n_neighbors=5)),
    "msom": (lambda: sim_ms_occ(20, 3, 3, (0., .5), 1., (0., .5), 1., seed=3),
             ModelSpec(model="msom")),
    "sp_msom": (lambda: sim_ms_occ(20, 3, 2, (0., .5), 1., (0., .5), 1., seed=4),
                ModelSpec(model="msom", spatial=True, kernel="matern", n_neighbors=5)),
    "iom": (lambda: sim_int_occ(25, [(20, 2, (0., .5)), (10, 3, (0., .5))], (0., .5), seed=5),
            ModelSpec(model="iom")),
    "sp_iom": (lambda: sim_int_occ(25, [(20, 2, (0., .5)), (10, 3, (0., .5))], (0., .5), seed=6),
               ModelSpec(model="iom", spatial=True, gp="full", kernel="spherical")),
}
