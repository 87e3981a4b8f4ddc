"""Bayesian occupancy models fitted by Polya-Gamma Gibbs sampling, with
nearest-neighbor Gaussian processes for spatial random effects."""

from .chains import PosteriorChains
from .data import (ConfigError, DataError, Dataset, ModelSpec, PriorSpec, load_dataset,
                   make_dataset, validate, write_dataset)
from .samplers import (NumericalError, fit, fit_iom, fit_msom, fit_sp_iom, fit_sp_msom,
                       fit_sp_ssom, fit_ssom)
from .simulate import SpatialSim, sim_int_occ, sim_ms_occ, sim_occ

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "Dataset", "ModelSpec", "NumericalError", "PosteriorChains",
    "PriorSpec", "SpatialSim", "fit", "fit_iom", "fit_msom", "fit_sp_iom", "fit_sp_msom",
    "fit_sp_ssom", "fit_ssom", "load_dataset", "make_dataset", "sim_int_occ", "sim_ms_occ",
    "sim_occ", "validate", "write_dataset",
]
