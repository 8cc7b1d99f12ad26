"""Stochastic simulation toolkit for allele-frequency dynamics under
temporally and spatially fluctuating selection.

Submodules
----------
core        spatial torus, RNG streams, environment kernels and fields
nonspatial  event-driven non-spatial Lambda-Fleming-Viot with fluctuating
            selection and its rescaled family
limits      limiting diffusion / SPDE integrators, coloured noise, and the
            geometric constants of the scaling limits
slfv        grid-based spatial Lambda-Fleming-Viot simulator with tracers
duals       branching-annihilating dual processes and Monte-Carlo duality
            verification
moran       deme-based Moran model with fluctuating selection, ancestral
            tracers, and record files
cli         config-driven experiment orchestration (``flucsel simulate``,
            ``flucsel verify``)
"""

from . import core, duals, limits, moran, nonspatial, slfv
from .errors import ConfigError, DomainError, FlucselError, KernelError, StateError

__all__ = [
    "core",
    "nonspatial",
    "limits",
    "slfv",
    "duals",
    "moran",
    "FlucselError",
    "ConfigError",
    "DomainError",
    "KernelError",
    "StateError",
]

__version__ = "0.1.0"
