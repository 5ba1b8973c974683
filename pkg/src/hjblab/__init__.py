"""Desk-scale laboratory for filtering-driven control on measure spaces.

Modules
-------
measures    discrete measures, Gaussian smoothing, quadrature rules
transport   exact Wasserstein distances and the smoothed-W2 estimator
gauge       dyadic gauge function, thresholds, analytic derivatives
entropy     entropy / Fisher functionals of smoothed measures
varcalc     finite-difference oracles for measure derivatives
ksfilter    correlated-noise particle filter and Kalman-Bucy oracle
hjb         cylindrical functions, generator, HJB residual, value, DPP
doubling    penalized pair maximization and inequality suites
cli         `lab` command-line entry point
"""

__version__ = "0.1.0"

from .errors import (
    AccuracyError,
    DegeneracyError,
    EvalError,
    InternalError,
    InvalidInput,
    LabError,
    NonConvergence,
    NumericalError,
    SuiteFailure,
)
from .measures import (
    DiscreteMeasure,
    QuadKind,
    QuadratureRule,
    SmoothedDensity,
    dirac,
    gaussian_convolve_moment2,
    moment,
    sample,
    smoothed_density_at,
)

__all__ = [
    "__version__",
    "AccuracyError",
    "DegeneracyError",
    "DiscreteMeasure",
    "EvalError",
    "InternalError",
    "InvalidInput",
    "LabError",
    "NonConvergence",
    "NumericalError",
    "QuadKind",
    "QuadratureRule",
    "SmoothedDensity",
    "SuiteFailure",
    "dirac",
    "gaussian_convolve_moment2",
    "moment",
    "sample",
    "smoothed_density_at",
]
