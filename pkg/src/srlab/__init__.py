"""Numerical toolkit for sub-Riemannian geometry and small-noise hypoelliptic diffusions."""

from .control import Control, Path, endpoint_gradient, h1_norm_sq, integrate
from .models import VectorFieldModel, make_model, model_from_config
from .rough import holder_stats, levy_area, rough_norm
from .sde import SimConfig, estimate_heat_kernel, sample_bridge, simulate
from .srgeom import GeodesicOptions, minimize_energy, path_energy, rate_function

__version__ = "0.1.0"

__all__ = [
    "Control",
    "GeodesicOptions",
    "Path",
    "SimConfig",
    "VectorFieldModel",
    "endpoint_gradient",
    "estimate_heat_kernel",
    "h1_norm_sq",
    "holder_stats",
    "integrate",
    "levy_area",
    "make_model",
    "minimize_energy",
    "model_from_config",
    "path_energy",
    "rate_function",
    "rough_norm",
    "sample_bridge",
    "simulate",
]
