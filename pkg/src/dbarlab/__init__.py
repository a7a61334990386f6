"""dbarlab: weighted L^p experiments for the d-bar equation on product domains.

Modules: ``grid`` (polar grids, quadrature, norms), ``weights`` (A_p
constants), ``riesz`` (Riesz-type integrals), ``dbar`` (Cauchy-transform
solver and Bergman projection), ``hartogs`` (Hartogs triangle transport),
``verify`` (sharpness counterexamples), ``report`` and ``cli``.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DbarlabError,
    DegreeCapError,
    GridMismatchError,
    InvalidDomainError,
    NotClosedError,
    ParameterError,
    SamplingError,
    ThresholdError,
)
from .grid import (  # noqa: E402
    DiscFactor,
    Form01,
    PolarGrid,
    ProductGrid,
    SampledField,
    build_grid,
    integrate,
    sample,
    unit_disc,
    weighted_lp_norm,
)

__all__ = [
    "__version__",
    "ConfigError", "DbarlabError", "DegreeCapError", "GridMismatchError", "InvalidDomainError",
    "NotClosedError", "ParameterError", "SamplingError", "ThresholdError",
    "DiscFactor", "Form01", "PolarGrid", "ProductGrid", "SampledField",
    "build_grid", "integrate", "sample", "unit_disc", "weighted_lp_norm",
]
