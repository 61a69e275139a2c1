"""FEM homogenization of randomly perturbed periodic elliptic coefficients.

The package computes supercell corrector problems and homogenized matrices
for two perturbation models of a periodic conductivity tensor (an additive
cellwise-random perturbation, and a random diffeomorphism of the material),
their first-order expansions in the perturbation size, and seeded Monte
Carlo studies of the second-order residuals.
"""

from perthom.errors import (
    CoercivityError,
    ConfigError,
    FamilyValidityError,
    SolverError,
)

__version__ = "0.1.0"

__all__ = [
    "CoercivityError",
    "ConfigError",
    "FamilyValidityError",
    "SolverError",
    "__version__",
]
