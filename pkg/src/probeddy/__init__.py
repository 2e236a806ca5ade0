"""Probabilistic eddy identification from Lagrangian ice-floe observations.

Pipeline: a stochastic spectral ocean drives ice floes; noisy floe
trajectories are assimilated with a conditional-Gaussian filter and smoother;
posterior ocean realizations drawn by backward sampling are diagnosed with
the Okubo-Weiss criterion and aggregated into eddy statistics.
"""
__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AliasingError,
    ConfigurationError,
    InvalidParameterError,
    MissingStageError,
    NumericalInstabilityError,
)

__all__ = [
    "__version__",
    "AliasingError",
    "ConfigurationError",
    "InvalidParameterError",
    "MissingStageError",
    "NumericalInstabilityError",
]
