"""Ensemble filtering for dissipative and hyperbolic PDEs on the torus.

Forward solvers (spectral Navier-Stokes, finite-volume Burgers), weighted
ensembles, window-averaged observables with noise models, the
prediction-correction filter, and Wasserstein diagnostics.
"""

from .errors import (BlowUpError, ConfigurationError, CriterionFailed, DegeneratePosterior,
                     InvalidArgument)
from .fields import Grid2, SpectralField, Trajectory
from .forward_claw import CellField, CellGrid, ClawForward, FVConfig
from .forward_ns import NSConfig, NSForward
from .probability import PriorSpec, WeightedEnsemble, sample_prior
from .observe import Channel, MeasurementSet, NoiseModel, Observable, SpatialWeight
from .assimilate import FilteringDistribution, filter_recursive, smoothing_posterior
from .metrics import d_T, w1

__version__ = "0.1.0"

__all__ = [
    "BlowUpError", "ConfigurationError", "CriterionFailed", "DegeneratePosterior",
    "InvalidArgument", "Grid2", "SpectralField", "Trajectory", "CellField", "CellGrid",
    "ClawForward", "FVConfig", "NSConfig", "NSForward", "PriorSpec", "WeightedEnsemble",
    "sample_prior", "Channel", "MeasurementSet", "NoiseModel", "Observable", "SpatialWeight",
    "FilteringDistribution", "filter_recursive", "smoothing_posterior", "d_T", "w1",
]
