"""Numerical toolkit for low-frequency observations of reflected diffusions on [0, 1].

Spectral transition densities, drift derivatives and score operators, the
parabolic perturbation recursion, exact and Euler simulation, and Monte Carlo
checks of local asymptotic normality.
"""

__version__ = "0.1.0"

from .errors import ConfigurationError, DiffLanError, DomainError, InconsistencyError, NumericError
from .model import DriftSpec, Grid, InvariantDensity, check_admissible, invariant_density
from .spectral import SpectralDecomposition, build_decomposition
from .kernel import heat_kernel, transition_density
from .score import derivative_field, lan_norm, score_field
from .sim import RngStream, exact_skeleton_sample, simulate_reflected

__all__ = [
    "__version__",
    "DiffLanError",
    "DomainError",
    "ConfigurationError",
    "NumericError",
    "InconsistencyError",
    "DriftSpec",
    "Grid",
    "InvariantDensity",
    "check_admissible",
    "invariant_density",
    "SpectralDecomposition",
    "build_decomposition",
    "heat_kernel",
    "transition_density",
    "derivative_field",
    "score_field",
    "lan_norm",
    "RngStream",
    "exact_skeleton_sample",
    "simulate_reflected",
]
