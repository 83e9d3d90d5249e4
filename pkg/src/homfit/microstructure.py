"""Reproducible random microstructures.

Uniform draws come from a counter-based generator: every value is a pure
function of ``(seed, stream, edge index)``, so fields can be regenerated
bit-exactly and realizations can be produced in any order or in parallel.

Fields are stored with shape ``(d, n, ..., n)``: entry ``[i, x]`` belongs to the
edge ``(x, x + e_i)``, with periodic wraparound at the box boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
import csv
from typing import Optional, Protocol

import numpy as np

from homfit.errors import DegenerateFieldError, DomainError
from homfit.params import ThetaParams

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
# Conductances below this are treated as corrupted input.
MIN_CONDUCTANCE = 1e-300


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 output finalizer on a uint64 array (wrapping arithmetic)."""
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _splitmix_outputs(state: int, count: int, offset: int = 0) -> np.ndarray:
    """Outputs ``offset .. offset+count-1`` of a SplitMix64 sequence started at ``state``."""
    j = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    return _mix64(np.uint64(state & _MASK64) + j * _GOLDEN)


def stream_key(seed: int, stream: int = 0) -> int:
    """64-bit key for realization ``stream`` under ``seed``."""
    root = int(_mix64(np.array([seed & _MASK64], dtype=np.uint64))[0])
    return int(_splitmix_outputs(root, 1, offset=stream)[0])


def derive_seed(seed: int, index: int) -> int:
    """Independent child seed, e.g. for per-realization provenance records."""
    return stream_key(seed, index)


def uniform_open(seed: int, count: int, stream: int = 0) -> np.ndarray:
    """``count`` uniforms strictly inside (0, 1).

    The top 52 bits j of each raw word map to (j + 1/2) / 2^52, which is exact
    in double precision and keeps both endpoints out of reach.
    """
    raw = _splitmix_outputs(stream_key(seed, stream), count)
    return ((raw >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0**-52


@dataclass(frozen=True)
class UniformField:
    values: np.ndarray
    seed: int
    stream: int
    dimension: int
    n: int

    @property
    def size(self) -> int:
        return self.values.size


def draw_uniform_field(dimension: int, n: int, seed: int, stream: int = 0) -> UniformField:
    """One uniform draw per lattice edge, ``dimension * n**dimension`` in total."""
    if dimension not in (1, 2):
        raise DomainError(f"dimension must be 1 or 2, got {dimension}")
    if n < 1:
        raise DomainError(f"box size must be >= 1, got {n}")
    shape = (dimension,) + (n,) * dimension
    values = uniform_open(seed, int(np.prod(shape)), stream).reshape(shape)
    values.flags.writeable = False
    return UniformField(values, int(seed), int(stream), dimension, n)


def _check_open_unit(u):
    u = np.asarray(u, dtype=float)
    if np.any(~(u > 0.0)) or np.any(~(u < 1.0)):
        raise DomainError("uniform draws must lie in the open interval (0, 1)")
    return u


def _neg_log_survival(u):
    return -np.log1p(-_check_open_unit(u))


def _as_scalar(u_in, out):
    return float(out) if np.ndim(u_in) == 0 else out


def weibull_radius(u, theta: ThetaParams):
    """Inverse-CDF sample lam * (-ln(1-u))^(1/k) of the Weibull(lam, k) law."""
    return _as_scalar(u, theta.lam * _neg_log_survival(u) ** (1.0 / theta.k))


def conductance_from_uniform(u, theta: ThetaParams):
    """Channel conductance, the fourth power of the radius (unit prefactor)."""
    # A physical prefactor pi / (8 * viscosity) would multiply here.
    return _as_scalar(u, np.asarray(weibull_radius(u, theta)) ** 4)


def w_transform(u, k: float):
    """w = (-ln(1-u))^(-1/k); 1/w follows Weibull(1, k)."""
    if not k > 0:
        raise DomainError(f"k must be positive, got {k}")
    # Reciprocal of the same power used for the radius, so its rounding cancels in w^4 * a.
    return _as_scalar(u, 1.0 / _neg_log_survival(u) ** (1.0 / k))


def log_w_transform(u, k: float):
    """ln w, computed without forming w."""
    return _as_scalar(u, -np.log(_neg_log_survival(u)) / k)


class ConductanceLaw(Protocol):
    name: str

    def conductance(self, u: np.ndarray, theta: ThetaParams) -> np.ndarray: ...


class WeibullLaw:
    """Radii ~ Weibull(lam, k), conductance = radius^4, i.e. Weibull(lam^4, k/4)."""

    name = "weibull"

    def radius(self, u, theta):
        return weibull_radius(u, theta)

    def conductance(self, u, theta):
        return conductance_from_uniform(u, theta)

    def cdf(self, r, theta):
        return 1.0 - np.exp(-(np.asarray(r) / theta.lam) ** theta.k)


class ConstantLaw:
    """Deterministic field equal to lam^4 everywhere; for debugging pipelines."""

    name = "constant"

    def conductance(self, u, theta):
        return np.full(np.shape(u), theta.lam**4)


WEIBULL = WeibullLaw()


@dataclass(frozen=True)
class ConductanceField:
    values: np.ndarray
    theta: Optional[ThetaParams] = None
    seed: Optional[int] = None
    stream: Optional[int] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        d = v.shape[0]
        if d not in (1, 2) or v.ndim != d + 1 or len(set(v.shape[1:])) != 1:
            raise DomainError(f"field must have shape (d, n, ..., n) with d in (1, 2), got {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < MIN_CONDUCTANCE):
            raise DegenerateFieldError("conductances must be finite and strictly positive")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dimension(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def scaled(self, factor: float) -> "ConductanceField":
        return ConductanceField(self.values * factor, self.theta, self.seed, self.stream)


def conductance_field(u: UniformField, theta: ThetaParams, law: ConductanceLaw = WEIBULL) -> ConductanceField:
    return ConductanceField(law.conductance(u.values, theta), theta, u.seed, u.stream)


def draw_conductance_field(dimension: int, n: int, seed: int, theta: ThetaParams,
                           stream: int = 0, law: ConductanceLaw = WEIBULL) -> ConductanceField:
    return conductance_field(draw_uniform_field(dimension, n, seed, stream), theta, law)


def write_field_csv(path, u: UniformField, field: ConductanceField) -> None:
    """Audit dump with header ``index,u,a`` (flat C-order edge index)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "u", "a"])
        for i, (uu, aa) in enumerate(zip(u.values.ravel(), field.values.ravel())):
            writer.writerow([i, repr(float(uu)), repr(float(aa))])
