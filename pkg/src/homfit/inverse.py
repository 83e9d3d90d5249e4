"""Parameter identification: least-squares objectives and a damped Newton solver.

The 1D objective is built from the variables w_i = (-ln(1 - u_i))^(-1/k)
through the two reduced quantities

    f(lam, k) = lam^4 / sum_i w_i^4,      g(k) = sum_i w_i^8 / (sum_i w_i^4)^2,

whose first and second derivatives are available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Callable, Optional, Sequence

import numpy as np

from homfit.errors import DegenerateFieldError, DomainError
from homfit.forward import DEFAULT_TOL, ForwardConfig, mc_summary, sample_permeabilities
from homfit.microstructure import WEIBULL, ConductanceLaw, UniformField
from homfit.params import (
    K_VARIANCE_MIN,
    ObjectiveEval,
    ThetaParams,
    is_feasible,
    least_squares_eval,
    require_variance_shape,
)


@dataclass(frozen=True)
class Observations:
    """Observed permeability, its relative variance, and the box size they refer to."""

    k_obs: float
    s_obs: float
    n: int

    def __post_init__(self):
        object.__setattr__(self, "k_obs", float(self.k_obs))
        object.__setattr__(self, "s_obs", float(self.s_obs))
        object.__setattr__(self, "n", int(self.n))
        if not (math.isfinite(self.k_obs) and self.k_obs > 0):
            raise DomainError(f"k_obs must be positive, got {self.k_obs}")
        if not (math.isfinite(self.s_obs) and self.s_obs > 0):
            raise DomainError(f"s_obs must be positive, got {self.s_obs}")
        if self.n < 2:
            raise DomainError(f"n must be >= 2, got {self.n}")


def log_survival_logs(u) -> np.ndarray:
    """ln(-ln(1 - u)) for every draw; w_i = exp(-this / k)."""
    vals = u.values if isinstance(u, UniformField) else np.asarray(u, dtype=float)
    vals = np.ravel(vals)
    if vals.size == 0:
        raise DomainError("empty uniform field")
    if np.any(~(vals > 0)) or np.any(~(vals < 1)):
        raise DomainError("uniform draws must lie in (0, 1)")
    return np.log(-np.log1p(-vals))


@dataclass
class AuxFG:
    f: float
    g: float
    s_n: float
    df_dlam: float
    df_dk: float
    d2f_dlam2: float
    d2f_dk2: float
    d2f_dlamdk: float
    dg: float
    d2g: float


def _aux_from_logs(lam: float, k: float, log_l: np.ndarray) -> AuxFG:
    if not (lam > 0 and k > 0):
        raise DomainError(f"need lam > 0 and k > 0, got ({lam}, {k})")
    n = log_l.size
    lw = -log_l / k
    with np.errstate(over="ignore"):
        w4 = np.exp(4.0 * lw)
        w8 = w4 * w4
    if not np.all(np.isfinite(w8)):
        raise DomainError(f"w^8 overflows for k={k}; shape too small for this field")
    s4, s8 = w4.sum(), w8.sum()
    t4, t8 = (lw * w4).sum(), (lw * w8).sum()
    q4, q8 = (lw * lw * w4).sum(), (lw * lw * w8).sum()

    lam4 = lam**4
    f = lam4 / s4
    df_dk = 4.0 * lam4 / k * t4 / s4**2
    d2f_dk2 = (-8.0 * lam4 / k**2 * (t4 + 2.0 * q4) / s4**2
               + 32.0 * lam4 / k**2 * t4 * t4 / s4**3)
    ratio = s8 / s4
    g = s8 / s4**2
    dg = 8.0 / k / s4**2 * (ratio * t4 - t8)
    d2g = (16.0 / k**2 / s4**2 * ((t8 + 4.0 * q8) - ratio * (t4 + 2.0 * q4))
           - 32.0 / k**2 / s4**3 * (4.0 * t8 * t4 - 3.0 * t4 * t4 * ratio))
    return AuxFG(
        f=f,
        g=g,
        s_n=g - 1.0 / n,
        df_dlam=4.0 / lam * f,
        df_dk=df_dk,
        d2f_dlam2=12.0 / lam**2 * f,
        d2f_dk2=d2f_dk2,
        d2f_dlamdk=4.0 / lam * df_dk,
        dg=dg,
        d2g=d2g,
    )


def aux_fg(theta: ThetaParams, u) -> AuxFG:
    """f, g, S_N = g - 1/N and their partial derivatives from one pass over the field."""
    return _aux_from_logs(theta.lam, theta.k, log_survival_logs(u))


def generate_synthetic_obs(theta_ref: ThetaParams, u) -> Observations:
    """Observations computed on one reference field at ``theta_ref``."""
    require_variance_shape(theta_ref.k)
    log_l = log_survival_logs(u)
    aux = _aux_from_logs(theta_ref.lam, theta_ref.k, log_l)
    if not aux.s_n > 0:
        raise DegenerateFieldError("reference field has zero empirical relative variance")
    return Observations(log_l.size * aux.f, aux.s_n, log_l.size)


class Objective1D:
    """Callable x = (lam, k) -> ObjectiveEval for one fixed field and observation pair."""

    def __init__(self, u, obs: Observations, weights: Sequence[float] = (1.0, 1.0),
                 k_min: float = K_VARIANCE_MIN):
        self.log_l = log_survival_logs(u)
        self.obs = obs
        self.weights = tuple(weights)
        self.k_min = k_min
        self.n = self.log_l.size

    def aux(self, lam: float, k: float) -> AuxFG:
        return _aux_from_logs(lam, k, self.log_l)

    def residuals(self, aux: AuxFG) -> tuple[float, float]:
        return (self.n * aux.f / self.obs.k_obs - 1.0, aux.s_n / self.obs.s_obs - 1.0)

    def __call__(self, x) -> ObjectiveEval:
        lam, k = float(x[0]), float(x[1])
        if not k >= self.k_min:
            raise DomainError(f"k must be >= {self.k_min}, got {k}")
        a = self.aux(lam, k)
        r1, r2 = self.residuals(a)
        c1 = self.n / self.obs.k_obs
        c2 = 1.0 / self.obs.s_obs
        j1 = c1 * np.array([a.df_dlam, a.df_dk])
        h1 = c1 * np.array([[a.d2f_dlam2, a.d2f_dlamdk], [a.d2f_dlamdk, a.d2f_dk2]])
        j2 = np.array([0.0, c2 * a.dg])
        h2 = np.array([[0.0, 0.0], [0.0, c2 * a.d2g]])
        return least_squares_eval((r1, r2), (j1, j2), (h1, h2), self.weights)


def objective_1d(theta: ThetaParams, u, obs: Observations, weights=(1.0, 1.0)) -> ObjectiveEval:
    """Practical 1D objective (N f / K_obs - 1)^2 + ((g - 1/N) / S_obs - 1)^2."""
    return Objective1D(u, obs, weights)(theta.as_array())


def objective_nm(theta: ThetaParams, base_seed: int, m: int, n: int, dimension: int, obs: Observations,
                 bc: str = "periodic", law: ConductanceLaw = WEIBULL, tol: float = DEFAULT_TOL,
                 weights=(1.0, 1.0), threads: int = 1) -> float:
    """Monte-Carlo objective built from ``m`` forward solves.

    The same ``base_seed`` yields the same uniform fields for every ``theta``,
    so the objective is a deterministic function of ``theta``.
    """
    if m < 2:
        raise DomainError(f"need m >= 2 realizations, got {m}")
    cfg = ForwardConfig(theta, n, dimension, m, base_seed, bc, tol, law, threads)
    summary = mc_summary(sample_permeabilities(cfg), n)
    r1 = summary.mean / obs.k_obs - 1.0
    r2 = summary.relvar / obs.s_obs - 1.0
    return weights[0] * r1 * r1 + weights[1] * r2 * r2


def fd_objective(value_fn: Callable[[np.ndarray], float], rel_step: float = 1e-4) -> Callable[[np.ndarray], ObjectiveEval]:
    """Wrap a value-only objective with central-difference gradient and Hessian."""

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        h = rel_step * np.maximum(np.abs(x), 1.0)
        f0 = value_fn(x)
        grad = np.zeros(2)
        hess = np.zeros((2, 2))
        fp, fm = np.zeros(2), np.zeros(2)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h[i]
            fp[i], fm[i] = value_fn(x + e), value_fn(x - e)
            grad[i] = (fp[i] - fm[i]) / (2 * h[i])
            hess[i, i] = (fp[i] - 2 * f0 + fm[i]) / h[i] ** 2
        e0, e1 = np.array([h[0], 0.0]), np.array([0.0, h[1]])
        hess[0, 1] = hess[1, 0] = (value_fn(x + e0 + e1) - value_fn(x + e0 - e1)
                                   - value_fn(x - e0 + e1) + value_fn(x - e0 - e1)) / (4 * h[0] * h[1])
        return ObjectiveEval(f0, grad, hess)

    return evaluate


# -- Newton -------------------------------------------------------------------

GRADIENT_TOLERANCE = "gradient-tolerance"
STEP_TOLERANCE = "step-tolerance"
MAX_ITERATIONS = "max-iterations"
LINE_SEARCH_FAILURE = "line-search-failure"


@dataclass
class NewtonOptions:
    grad_tol: float = 1e-10
    step_tol: float = 1e-12
    max_iter: int = 100
    armijo_c: float = 1e-4
    # Goldstein lower-bound constant; the step is lengthened when the decrease
    # beats (1 - goldstein_c) times the linear prediction.
    goldstein_c: float = 0.25
    backtrack: float = 0.5
    expand: float = 2.0
    max_trials: int = 50
    fixed_step: bool = False
    k_min: float = K_VARIANCE_MIN


@dataclass
class NewtonIterate:
    theta: tuple[float, float]
    value: float
    grad_norm: float
    step: float  # step size mu used to reach this iterate; 0 for the start


@dataclass
class NewtonTrace:
    iterates: list[NewtonIterate] = field(default_factory=list)
    converged: bool = False
    reason: str = ""

    @property
    def theta(self) -> ThetaParams:
        return ThetaParams(*self.iterates[-1].theta)

    @property
    def iterations(self) -> int:
        return len(self.iterates) - 1

    @property
    def value(self) -> float:
        return self.iterates[-1].value


def newton_direction(hessian: np.ndarray, gradient: np.ndarray, rel_floor: float = 1e-10) -> np.ndarray:
    """Solve (H + tau I) d = -g, with tau raised geometrically until H + tau I is safely definite."""
    H = 0.5 * (hessian + hessian.T)
    scale = max(abs(np.trace(H)), np.max(np.abs(H)), 1e-300)
    tau = 0.0
    while True:
        Ht = H + tau * np.eye(2)
        if np.linalg.eigvalsh(Ht)[0] > rel_floor * np.trace(Ht) and np.trace(Ht) > 0:
            return -np.linalg.solve(Ht, gradient)
        tau = rel_floor * scale if tau == 0.0 else tau * 10.0


def newton_fit(objective: Callable[[np.ndarray], ObjectiveEval], theta0: ThetaParams,
               opts: Optional[NewtonOptions] = None) -> NewtonTrace:
    """Damped Newton minimization over {lam > 0, k >= k_min}.

    Step sizes start at 1, are halved until the Armijo condition holds and the
    trial point is feasible, and are doubled while the Goldstein lower bound
    shows the accepted unit step to be too short.
    """
    opts = opts or NewtonOptions()
    x = theta0.as_array()
    if not is_feasible(x, opts.k_min):
        raise DomainError(f"initial guess {theta0} is outside the feasible domain")
    ev = objective(x)
    trace = NewtonTrace()

    def record(mu):
        trace.iterates.append(NewtonIterate((float(x[0]), float(x[1])), float(ev.value),
                                            float(np.max(np.abs(ev.gradient))), float(mu)))

    record(0.0)
    for _ in range(opts.max_iter):
        if np.max(np.abs(ev.gradient)) <= opts.grad_tol:
            trace.converged, trace.reason = True, GRADIENT_TOLERANCE
            return trace
        d = newton_direction(ev.hessian, ev.gradient)
        slope = float(ev.gradient @ d)
        if opts.fixed_step:
            mu, x_new = 1.0, x + d
            if not is_feasible(x_new, opts.k_min):
                trace.reason = LINE_SEARCH_FAILURE
                return trace
            ev_new = objective(x_new)
        else:
            found = _line_search(objective, x, ev.value, d, slope, opts)
            if found is None:
                trace.reason = LINE_SEARCH_FAILURE
                return trace
            mu, x_new, ev_new = found
        step = float(np.max(np.abs(x_new - x)))
        x, ev = x_new, ev_new
        record(mu)
        if step <= opts.step_tol:
            trace.converged, trace.reason = True, STEP_TOLERANCE
            return trace
    if np.max(np.abs(ev.gradient)) <= opts.grad_tol:
        trace.converged, trace.reason = True, GRADIENT_TOLERANCE
    else:
        trace.reason = MAX_ITERATIONS
    return trace


def _line_search(objective, x, f0, d, slope, opts: NewtonOptions):
    if not slope < 0:
        return None
    mu = 1.0
    accepted = None
    for trial in range(1, opts.max_trials + 1):
        x_try = x + mu * d
        if is_feasible(x_try, opts.k_min):
            ev = objective(x_try)
            if ev.value <= f0 + opts.armijo_c * mu * slope:
                accepted = (mu, x_try, ev)
                break
        mu *= opts.backtrack
    if accepted is None:
        return None
    if trial > 1:
        return accepted
    # Unit step accepted at once: lengthen while the Goldstein lower bound fails.
    while trial < opts.max_trials:
        mu, _, ev = accepted
        if ev.value >= f0 + (1.0 - opts.goldstein_c) * mu * slope:
            break
        trial += 1
        mu_new = mu * opts.expand
        x_try = x + mu_new * d
        if not is_feasible(x_try, opts.k_min):
            break
        ev_try = objective(x_try)
        if ev_try.value <= f0 + opts.armijo_c * mu_new * slope and ev_try.value < ev.value:
            accepted = (mu_new, x_try, ev_try)
        else:
            break
    return accepted


def fit_record(trace: NewtonTrace, theta0: ThetaParams, seed: Optional[int] = None,
               n: Optional[int] = None) -> dict:
    """Key/value summary of one fit, suitable for ``json.dump``."""
    last = trace.iterates[-1]
    return {
        "theta0": [theta0.lam, theta0.k],
        "theta_opt": list(last.theta),
        "iterations": trace.iterations,
        "converged": trace.converged,
        "reason": trace.reason,
        "value": last.value,
        "grad_norm": last.grad_norm,
        "seed": seed,
        "n": n,
    }
