"""Forward problem: apparent homogenized coefficients of random conductance lattices.

Two formulations are provided and kept deliberately separate:

* the truncated corrector problem, posed matrix-free on the periodic grid of
  ``n**d`` sites, with three boundary-condition choices expressed as sets of
  pinned sites (none, the inlet column, every boundary site);
* the pore-network pressure problem, assembled as a sparse matrix on the
  ``(n + 1) x n`` grid with two reservoir columns.

Both reduce to the same preconditioned conjugate-gradient routine.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
import math
import os
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from homfit.errors import DegenerateFieldError, DomainError, InsufficientSamplesError, SolverError
from homfit.microstructure import (
    WEIBULL,
    ConductanceField,
    ConductanceLaw,
    derive_seed,
    draw_conductance_field,
)
from homfit.params import ThetaParams

BOUNDARY_CONDITIONS = ("periodic", "pnm", "dirichlet")
DEFAULT_TOL = 1e-10


# -- lattice operators -------------------------------------------------------

def grad(phi: np.ndarray) -> np.ndarray:
    """Forward differences phi(x + e_i) - phi(x), periodic, stacked along axis 0."""
    return np.stack([np.roll(phi, -1, axis=i) - phi for i in range(phi.ndim)])


def grad_star(G: np.ndarray) -> np.ndarray:
    """Adjoint of ``grad``: -(sum_i G_i(x) - G_i(x - e_i))."""
    out = np.zeros(G.shape[1:])
    for i in range(G.shape[0]):
        out -= G[i] - np.roll(G[i], 1, axis=i)
    return out


def pinned_mask(dimension: int, n: int, bc: str) -> np.ndarray:
    """Sites held at zero for the corrector problem on the periodic grid.

    Coordinate ``n`` of the box {0..n}^d is identified with coordinate 0, so the
    reservoir condition pins the column x_1 = 0 and the homogeneous Dirichlet
    condition pins every site with some coordinate equal to 0.
    """
    shape = (n,) * dimension
    mask = np.zeros(shape, dtype=bool)
    if bc == "periodic":
        return mask
    if bc == "pnm":
        mask[0] = True
        return mask
    if bc == "dirichlet":
        for i in range(dimension):
            idx = [slice(None)] * dimension
            idx[i] = 0
            mask[tuple(idx)] = True
        return mask
    raise DomainError(f"unknown boundary condition {bc!r}; expected one of {BOUNDARY_CONDITIONS}")


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float  # relative 2-norm of the true residual


def pcg(matvec: Callable[[np.ndarray], np.ndarray], b: np.ndarray, diag: np.ndarray,
        tol: float, max_iter: int, project: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> CGResult:
    """Jacobi-preconditioned conjugate gradients for a symmetric PSD operator.

    ``project`` removes a nullspace component (the constant mode for the fully
    periodic problem) from residuals and preconditioned residuals.
    """
    proj = project if project is not None else (lambda v: v)
    b = proj(b)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return CGResult(x, 0, 0.0)
    r = b.copy()
    z = proj(r / diag)
    p = z.copy()
    rz = np.vdot(r, z)
    it = 0
    while it < max_iter:
        Ap = matvec(p)
        pAp = np.vdot(p, Ap)
        if not (pAp > 0 and np.isfinite(pAp)):
            break  # breakdown; judged by the true residual below
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        r = proj(r)
        it += 1
        if np.linalg.norm(r) <= tol * bnorm:
            # guard against drift of the recursive residual
            r = proj(b - matvec(x))
            if np.linalg.norm(r) <= tol * bnorm:
                return CGResult(x, it, np.linalg.norm(r) / bnorm)
        z = proj(r / diag)
        rz_new = np.vdot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(proj(b - matvec(x))) / bnorm
    if res <= tol:
        return CGResult(x, it, res)
    raise SolverError(f"CG stopped after {it} iterations at relative residual {res:.3e} > {tol:.1e}")


def default_max_iter(n_sites: int) -> int:
    return int(math.ceil(50 * math.sqrt(n_sites)))


# -- corrector problem ---------------------------------------------------------

@dataclass
class Corrector:
    phi: np.ndarray
    xi: np.ndarray
    bc: str
    iterations: int
    residual: float


def corrector_residual(field: ConductanceField, phi: np.ndarray, xi, bc: str = "periodic") -> np.ndarray:
    """grad_star[A (xi + grad phi)] on free sites (zero on pinned sites)."""
    a = field.values
    xi = np.asarray(xi, dtype=float)
    flux = a * (xi.reshape((-1,) + (1,) * field.dimension) + grad(phi))
    res = grad_star(flux)
    res[pinned_mask(field.dimension, field.n, bc)] = 0.0
    return res


def solve_corrector(field: ConductanceField, xi, tol: float = DEFAULT_TOL, bc: str = "periodic",
                    max_iter: Optional[int] = None) -> Corrector:
    """Solve -grad_star[A (xi + grad phi)] = 0 on the box.

    Periodic: phi is box-periodic with phi(0) = 0. ``pnm``: phi = 0 on the
    inlet/outlet columns, periodic transversally. ``dirichlet``: phi = 0 on the
    whole boundary.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    d, n = field.dimension, field.n
    a = field.values
    xi = np.asarray(xi, dtype=float).reshape(d)
    mask = pinned_mask(d, n, bc)
    free = ~mask

    def matvec(v):
        v = np.where(free, v, 0.0)
        out = grad_star(a * grad(v))
        return np.where(free, out, 0.0)

    # L phi = -grad_star(A xi)
    rhs = np.zeros((n,) * d)
    for i in range(d):
        rhs += xi[i] * (a[i] - np.roll(a[i], 1, axis=i))
    rhs = np.where(free, rhs, 0.0)

    diag = np.zeros((n,) * d)
    for i in range(d):
        diag += a[i] + np.roll(a[i], 1, axis=i)
    diag = np.where(free, diag, 1.0)

    project = None
    if bc == "periodic":
        project = lambda v: v - v.mean()
    cap = max_iter if max_iter is not None else default_max_iter(n**d)
    result = pcg(matvec, rhs, diag, tol, cap, project)
    phi = np.where(free, result.x, 0.0)
    if bc == "periodic":
        phi = phi - phi.flat[0]
    return Corrector(phi, xi, bc, result.iterations, result.residual)


# -- apparent tensor -------------------------------------------------------------

@dataclass
class ApparentSample:
    """One realization's apparent tensor.

    Samples computed with the reservoir (``pnm``) formulation carry a 1x1 tensor
    holding the flow-direction entry only.
    """

    tensor: np.ndarray
    n: int
    dimension: int
    seed: Optional[int] = None
    theta: Optional[ThetaParams] = None
    bc: str = "periodic"

    @property
    def permeability(self) -> float:
        return float(self.tensor[0, 0])


def apparent_tensor(field: ConductanceField, correctors: Sequence[Corrector]) -> ApparentSample:
    """A*_N xi_j = |box|^-1 sum_x A(x) (xi_j + grad phi_j(x)) for each corrector."""
    d = field.dimension
    if len(correctors) != d:
        raise DomainError(f"need {d} correctors, got {len(correctors)}")
    bcs = {c.bc for c in correctors}
    if len(bcs) != 1:
        raise DomainError("correctors were solved with different boundary conditions")
    xis = np.array([c.xi for c in correctors]).T  # column j is xi_j
    cols = np.empty((d, d))
    for j, c in enumerate(correctors):
        flux = field.values * (c.xi.reshape((-1,) + (1,) * d) + grad(c.phi))
        cols[:, j] = flux.reshape(d, -1).mean(axis=1)
    # Express in the canonical basis when the directions were not e_1..e_d.
    tensor = cols @ np.linalg.inv(xis)
    if not np.all(np.diag(tensor) > 0):
        raise SolverError("apparent tensor has a non-positive diagonal entry")
    return ApparentSample(tensor, field.n, d, field.seed, field.theta, bcs.pop())


def solve_apparent(field: ConductanceField, bc: str = "periodic", tol: float = DEFAULT_TOL) -> ApparentSample:
    correctors = [solve_corrector(field, np.eye(field.dimension)[i], tol, bc) for i in range(field.dimension)]
    return apparent_tensor(field, correctors)


def harmonic_mean_1d(field) -> float:
    """Closed-form 1D apparent coefficient ((1/N) sum 1/a_x)^-1."""
    if isinstance(field, ConductanceField):
        if field.dimension != 1:
            raise DomainError("harmonic_mean_1d needs a 1D field")
        a = field.values[0]
    else:
        a = np.ravel(np.asarray(field, dtype=float))
    if a.size == 0 or not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise DegenerateFieldError("conductances must be finite and strictly positive")
    return float(1.0 / np.mean(1.0 / a))


def wiener_bounds(field: ConductanceField) -> tuple[float, float]:
    """Bounds on (A*_N)_11 for the periodic problem.

    Lower: mean over transverse lines of the harmonic mean of a_1 along the flow
    direction. Upper: arithmetic mean of a_1.
    """
    a1 = field.values[0]
    lower = float(np.mean(1.0 / np.mean(1.0 / a1, axis=0)))
    upper = float(np.mean(a1))
    return lower, upper


# -- pore-network formulation ------------------------------------------------------

@dataclass
class PressureSolution:
    pressure: np.ndarray  # shape (n + 1,) or (n + 1, n); first axis runs along e_1
    p_o: float
    p_i: float
    iterations: int
    residual_max: float


def pnm_matrix(field: ConductanceField) -> sp.csr_matrix:
    """Graph Laplacian sum_{y~x} a(x,y) (P(x) - P(y)) on the (n+1) x n^(d-1) grid."""
    d, n = field.dimension, field.n
    a = field.values
    shape = (n + 1,) + (n,) * (d - 1)
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    rows, cols, vals = [], [], []

    def add_edges(i0, i1, c):
        i0, i1, c = i0.ravel(), i1.ravel(), c.ravel()
        rows.extend([i0, i1, i0, i1])
        cols.extend([i0, i1, i1, i0])
        vals.extend([c, c, -c, -c])

    add_edges(idx[:-1], idx[1:], a[0])
    if d == 2:
        # transverse edges, periodic in x_2; column n reuses the conductances of column 0
        a2 = np.concatenate([a[1], a[1][:1]], axis=0)
        add_edges(idx, np.roll(idx, -1, axis=1), a2)
    m = idx.size
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))


def solve_pnm_pressure(field: ConductanceField, p_o: float = 0.0, p_i: Optional[float] = None,
                       tol: float = DEFAULT_TOL, max_iter: Optional[int] = None) -> PressureSolution:
    """Pressure with P = p_o on column x_1 = 0 and P = p_i on column x_1 = n.

    Mass conservation holds at every interior site; the transverse direction is
    periodic.
    """
    n, d = field.n, field.dimension
    if p_i is None:
        p_i = float(n)
    if p_o == p_i:
        raise DomainError("reservoir pressures must differ")
    L = pnm_matrix(field)
    shape = (n + 1,) + (n,) * (d - 1)
    boundary = np.zeros(shape, dtype=bool)
    boundary[0] = boundary[-1] = True
    P = np.zeros(shape)
    P[0], P[-1] = p_o, p_i
    b_flat, f_flat = boundary.ravel(), ~boundary.ravel()
    if not f_flat.any():
        return PressureSolution(P, p_o, p_i, 0, 0.0)
    L_ff = L[f_flat][:, f_flat].tocsr()
    rhs = -(L[f_flat][:, b_flat] @ P.ravel()[b_flat])
    cap = max_iter if max_iter is not None else default_max_iter(f_flat.sum())
    res = pcg(lambda v: L_ff @ v, rhs, L_ff.diagonal(), tol, cap)
    P.ravel()[f_flat] = res.x
    residual = (L @ P.ravel())[f_flat]
    return PressureSolution(P, p_o, p_i, res.iterations, float(np.max(np.abs(residual))))


def pnm_permeability(field: ConductanceField, pressure, p_o: Optional[float] = None,
                     p_i: Optional[float] = None) -> float:
    """K*_N = n / (p_o - p_i) * n^-d * sum_x a_1(x) (P(x) - P(x + e_1))."""
    if isinstance(pressure, PressureSolution):
        p_o = pressure.p_o if p_o is None else p_o
        p_i = pressure.p_i if p_i is None else p_i
        pressure = pressure.pressure
    P = np.asarray(pressure, dtype=float)
    n, d = field.n, field.dimension
    if P.shape != (n + 1,) + (n,) * (d - 1):
        raise DomainError(f"pressure shape {P.shape} does not match the field")
    flow = field.values[0] * (P[:-1] - P[1:])
    return float(n / (p_o - p_i) * flow.sum() / n**d)


# -- Monte Carlo -------------------------------------------------------------------

@dataclass(frozen=True)
class McSummary:
    mean: float
    relvar: float
    m: int
    n: Optional[int] = None


def mc_summary(samples, n: Optional[int] = None) -> McSummary:
    """Empirical mean and relative variance (1/M normalization) of scalar samples.

    Sums are correctly rounded, so the result does not depend on sample order.
    """
    x = np.array([s.permeability if isinstance(s, ApparentSample) else s for s in samples], dtype=float)
    M = x.size
    if M < 2:
        raise InsufficientSamplesError(f"need at least 2 samples, got {M}")
    if np.all(x == x[0]):
        return McSummary(float(x[0]), 0.0, M, n)  # avoids a rounding residue in fsum(x) / M
    mean = math.fsum(x) / M
    var = math.fsum((x - mean) ** 2) / M
    return McSummary(mean, var / mean**2, M, n)


@dataclass
class ForwardConfig:
    theta: ThetaParams
    n: int
    dimension: int = 1
    m: int = 2
    seed: int = 0
    bc: str = "periodic"
    tol: float = DEFAULT_TOL
    law: ConductanceLaw = dc_field(default=WEIBULL)
    threads: int = 1
    use_solver_1d: bool = False


def realization_seed(base_seed: int, m: int) -> int:
    return derive_seed(base_seed, m)


def sample_one(cfg: ForwardConfig, m: int) -> ApparentSample:
    seed = realization_seed(cfg.seed, m)
    fld = draw_conductance_field(cfg.dimension, cfg.n, seed, cfg.theta, law=cfg.law)
    if cfg.dimension == 1 and not cfg.use_solver_1d and cfg.bc == "periodic":
        return ApparentSample(np.array([[harmonic_mean_1d(fld)]]), cfg.n, 1, seed, cfg.theta, cfg.bc)
    if cfg.bc == "pnm":
        sol = solve_pnm_pressure(fld, 0.0, float(cfg.n), cfg.tol)
        k = pnm_permeability(fld, sol)
        return ApparentSample(np.array([[k]]), cfg.n, cfg.dimension, seed, cfg.theta, cfg.bc)
    s = solve_apparent(fld, cfg.bc, cfg.tol)
    s.seed = seed
    return s


def sample_permeabilities(cfg: ForwardConfig) -> list[ApparentSample]:
    """Run ``cfg.m`` independent realizations; output order is the realization index."""
    threads = cfg.threads or (os.cpu_count() or 1)
    if threads <= 1 or cfg.m <= 1:
        return [sample_one(cfg, m) for m in range(cfg.m)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda m: sample_one(cfg, m), range(cfg.m)))
