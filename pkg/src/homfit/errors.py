"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class DegenerateFieldError(ValueError):
    """A conductance field contains zero, negative or non-finite entries."""


class InsufficientSamplesError(ValueError):
    pass


class SolverError(RuntimeError):
    """A linear solve did not reach its tolerance within the iteration cap."""
