"""Parameter and result containers used by several modules."""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from homfit.errors import DomainError

# Smallest admissible shape for anything involving the variance of the
# apparent coefficient; the variance is infinite for k <= 8.
K_VARIANCE_MIN = 8.0 + 1e-3
# Smallest admissible shape for the closed-form homogenized coefficient.
K_MEAN_MIN = 4.0


@dataclass(frozen=True)
class ThetaParams:
    """Weibull law parameters for the channel radii: scale ``lam``, shape ``k``."""

    lam: float
    k: float

    def __post_init__(self):
        lam, k = float(self.lam), float(self.k)
        if not (math.isfinite(lam) and lam > 0):
            raise DomainError(f"lambda must be positive and finite, got {self.lam!r}")
        if not (math.isfinite(k) and k > 0):
            raise DomainError(f"k must be positive and finite, got {self.k!r}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "k", k)

    def as_array(self) -> np.ndarray:
        return np.array([self.lam, self.k])

    @classmethod
    def from_array(cls, x) -> "ThetaParams":
        return cls(float(x[0]), float(x[1]))

    def require_variance_domain(self) -> "ThetaParams":
        require_variance_shape(self.k)
        return self


def require_variance_shape(k: float) -> None:
    if not k >= K_VARIANCE_MIN:
        raise DomainError(f"k must be >= {K_VARIANCE_MIN} (finite variance needs k > 8), got {k}")


def is_feasible(x, k_min: float = K_VARIANCE_MIN) -> bool:
    """Whether ``x = (lam, k)`` lies in the inverse-problem domain."""
    lam, k = float(x[0]), float(x[1])
    return math.isfinite(lam) and math.isfinite(k) and lam > 0 and k >= k_min


@dataclass
class ObjectiveEval:
    """Value, gradient and Hessian of a two-parameter objective at one point."""

    value: float
    gradient: np.ndarray = field(default_factory=lambda: np.zeros(2))
    hessian: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))

    def __post_init__(self):
        self.gradient = np.asarray(self.gradient, dtype=float).reshape(2)
        h = np.asarray(self.hessian, dtype=float).reshape(2, 2)
        self.hessian = 0.5 * (h + h.T)


def least_squares_eval(residuals, jacobian, residual_hessians, weights=(1.0, 1.0)) -> ObjectiveEval:
    """Assemble F = sum_j w_j r_j^2 and its derivatives from residual derivatives.

    ``jacobian[j]`` is the gradient of residual j, ``residual_hessians[j]`` its
    2x2 Hessian.
    """
    value = 0.0
    grad = np.zeros(2)
    hess = np.zeros((2, 2))
    for w, r, dr, d2r in zip(weights, residuals, jacobian, residual_hessians):
        dr = np.asarray(dr, dtype=float)
        value += w * r * r
        grad += 2.0 * w * r * dr
        hess += 2.0 * w * (np.outer(dr, dr) + r * np.asarray(d2r, dtype=float))
    return ObjectiveEval(value, grad, hess)
