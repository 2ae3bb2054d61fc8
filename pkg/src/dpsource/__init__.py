"""Nonparametric Bayesian point-source detection for photon event lists.

Photons are modelled as a two-level mixture: point sources seen through the
PSF and a diffuse background built from bivariate B-spline densities, each
level a Dirichlet process mixture fitted with a collapsed Gibbs sampler.
"""

from .bspline import BackgroundComponent, knot_variance, normalized_bspline_density
from .domain import (GridSpec, Hyperparameters, MapBounds, PhotonEvent, PixelGrid, RunConfig,
                     ValidationError, read_event_list, write_event_list)
from .postprocess import Region, RegionReport, analyze, posterior_background_map
from .psf import GaussianPsf, TabulatedPsf
from .sampler import ChainState, MixtureModel, Trace, build_model, run_chain
from .simulator import SimScenario, SourceSpec, simulate

__all__ = [
    "BackgroundComponent", "ChainState", "GaussianPsf", "GridSpec", "Hyperparameters",
    "MapBounds", "MixtureModel", "PhotonEvent", "PixelGrid", "Region", "RegionReport",
    "RunConfig", "SimScenario", "SourceSpec", "TabulatedPsf", "Trace", "ValidationError",
    "analyze", "build_model", "knot_variance", "normalized_bspline_density",
    "posterior_background_map", "read_event_list", "run_chain", "simulate", "write_event_list",
]
__version__ = "0.1.0"
