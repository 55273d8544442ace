"""Causal-effect estimation under latent confounding with a stochastic neural network.

A latent confounder layer is imputed with adaptive stochastic-gradient
Hamiltonian Monte Carlo while each network module is updated against its
own conditional likelihood plus a spike-and-slab prior.
"""

from .errors import (
    CheckpointError,
    ConfigurationError,
    DegenerateFitError,
    DimensionError,
    NumericError,
    SchemaError,
    StoNetError,
)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CheckpointError",
    "ConfigurationError",
    "DegenerateFitError",
    "DimensionError",
    "NumericError",
    "SchemaError",
    "StoNetError",
    "__version__",
]
