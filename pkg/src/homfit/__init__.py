"""Forward homogenization of random conductance lattices and identification of
the microscopic Weibull law from macroscopic permeability data."""

from homfit.errors import DegenerateFieldError, DomainError, InsufficientSamplesError, SolverError
from homfit.params import ObjectiveEval, ThetaParams

__version__ = "0.1.0"

__all__ = [
    "DegenerateFieldError",
    "DomainError",
    "InsufficientSamplesError",
    "ObjectiveEval",
    "SolverError",
    "ThetaParams",
]
