"""Gibbs samplers for the six occupancy model classes."""

from .engine import NumericalError, OccupancySampler
from .fit import (fit, fit_iom, fit_msom, fit_sp_iom, fit_sp_msom, fit_sp_ssom, fit_ssom,
                  run_chain)

__all__ = [
    "NumericalError", "OccupancySampler", "fit", "fit_iom", "fit_msom", "fit_sp_iom",
    "fit_sp_msom", "fit_sp_ssom", "fit_ssom", "run_chain",
]
