"""Command-line drivers for forward runs, single fits and the identification experiments.

Exit status: 0 on success, 2 on usage or configuration errors, 3 on numerical
failure. Every output file starts with ``#`` comment lines holding the full
configuration, so a file is enough to rerun the command that produced it.
"""

from __future__ import annotations

import argparse
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
import json
import logging
import math
import os
from pathlib import Path
import sys
from typing import Optional

import numpy as np

from homfit.errors import DegenerateFieldError, DomainError, SolverError
from homfit.forward import BOUNDARY_CONDITIONS, DEFAULT_TOL, ForwardConfig, mc_summary, sample_permeabilities
from homfit.inverse import (
    NewtonOptions,
    Objective1D,
    Observations,
    fit_record,
    generate_synthetic_obs,
    newton_fit,
)
from homfit.microstructure import WEIBULL, ConstantLaw, derive_seed, draw_uniform_field
from homfit.params import K_VARIANCE_MIN, ThetaParams
from homfit.special_math import astar_closed_form, relvar_leading

log = logging.getLogger("homfit")

COMMANDS = ("forward", "fit", "experiment-robustness", "experiment-noise", "convergence-study")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    dimension: int = 1
    n: Optional[int] = None
    m: int = 500
    lam: float = 1.0
    k: float = 15.0
    lam0: float = 1.1
    k0: float = 16.5
    seed: int = 2024
    out: Optional[str] = None
    bins: int = 30
    threads: int = 0
    grad_tol: float = 1e-10
    step_tol: float = 1e-12
    max_iter: int = 100
    weights: tuple = (1.0, 1.0)
    bc: str = "periodic"
    tol: float = DEFAULT_TOL
    constant_field: bool = False
    fixed_step: bool = False
    same_field: bool = False
    k_obs: Optional[float] = None
    s_obs: Optional[float] = None
    grid: int = 5
    grid_lambda: tuple = (0.8, 1.3)
    grid_k: tuple = (12.0, 25.0)
    ns: tuple = (4, 8, 16, 32)

    def __post_init__(self):
        if self.n is None:
            self.n = 100_000 if self.dimension == 1 else 32
        self.validate()

    @property
    def theta(self) -> ThetaParams:
        return ThetaParams(self.lam, self.k)

    @property
    def theta0(self) -> ThetaParams:
        return ThetaParams(self.lam0, self.k0)

    @property
    def worker_count(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)

    def newton_options(self) -> NewtonOptions:
        return NewtonOptions(grad_tol=self.grad_tol, step_tol=self.step_tol, max_iter=self.max_iter,
                             fixed_step=self.fixed_step)

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.command in COMMANDS, f"unknown command {self.command!r}")
        need(self.dimension in (1, 2), "--dim must be 1 or 2")
        need(self.n >= 2, "--n must be >= 2")
        need(self.m >= 2, "--m must be >= 2")
        need(self.bins >= 1, "--bins must be >= 1")
        need(self.threads >= 0, "--threads must be >= 0")
        need(self.bc in BOUNDARY_CONDITIONS, f"--bc must be one of {BOUNDARY_CONDITIONS}")
        need(self.tol > 0 and self.grad_tol > 0 and self.step_tol > 0, "tolerances must be positive")
        need(len(self.weights) == 2 and all(w >= 0 for w in self.weights) and sum(self.weights) > 0,
             "--weights takes two nonnegative numbers, not both zero")
        need(self.lam > 0 and self.lam0 > 0, "lambda values must be positive")
        need(self.grid >= 1, "--grid must be >= 1")
        inverse = self.command in ("fit", "experiment-robustness", "experiment-noise")
        k_floor = K_VARIANCE_MIN if inverse else 4.0
        need(self.k >= k_floor if inverse else self.k > k_floor,
             f"--k must be {'>=' if inverse else '>'} {k_floor} for {self.command}")
        if inverse:
            need(self.dimension == 1, f"{self.command} is implemented for --dim 1 only")
            need(self.k0 >= K_VARIANCE_MIN, f"--k0 must be >= {K_VARIANCE_MIN}")
            need(self.grid_k[0] >= K_VARIANCE_MIN and self.grid_lambda[0] > 0,
                 "robustness grid must stay in lambda > 0, k > 8")
        need((self.k_obs is None) == (self.s_obs is None), "--k-obs and --s-obs go together")
        if self.k_obs is not None:
            need(self.k_obs > 0 and self.s_obs > 0, "--k-obs and --s-obs must be positive")


# -- config parsing ------------------------------------------------------------

def _floats(text: str) -> tuple:
    return tuple(float(t) for t in str(text).replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in str(text).replace(",", " ").split())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


# config-file key -> (RunConfig field, converter)
_KEYS = {
    "dim": ("dimension", int), "dimension": ("dimension", int),
    "n": ("n", int), "m": ("m", int),
    "lambda": ("lam", float), "k": ("k", float),
    "lambda0": ("lam0", float), "k0": ("k0", float),
    "seed": ("seed", int), "out": ("out", str), "bins": ("bins", int),
    "threads": ("threads", int), "grad_tol": ("grad_tol", float), "step_tol": ("step_tol", float),
    "max_iter": ("max_iter", int), "weights": ("weights", _floats), "bc": ("bc", str),
    "tol": ("tol", float), "constant_field": ("constant_field", _bool),
    "fixed_step": ("fixed_step", _bool), "same_field": ("same_field", _bool),
    "k_obs": ("k_obs", float), "s_obs": ("s_obs", float), "grid": ("grid", int),
    "grid_lambda": ("grid_lambda", _floats), "grid_k": ("grid_k", _floats), "ns": ("ns", _ints),
}


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        name, conv = _KEYS[key]
        try:
            values[name] = conv(val)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homfit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        # defaults are None so that unset flags do not override the config file
        p.add_argument("--config")
        p.add_argument("--dim", dest="dimension", type=int)
        p.add_argument("--n", type=int)
        p.add_argument("--m", type=int)
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--k", type=float)
        p.add_argument("--lambda0", dest="lam0", type=float)
        p.add_argument("--k0", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--bins", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--grad-tol", dest="grad_tol", type=float)
        p.add_argument("--step-tol", dest="step_tol", type=float)
        p.add_argument("--max-iter", dest="max_iter", type=int)
        p.add_argument("--weights", type=_floats, help="two weights, e.g. 1,1")
        p.add_argument("--bc", choices=BOUNDARY_CONDITIONS)
        p.add_argument("--tol", type=float, help="linear solver relative residual")
        p.add_argument("--constant-field", dest="constant_field", action="store_const", const=True)
        p.add_argument("--fixed-step", dest="fixed_step", action="store_const", const=True,
                       help="disable the line search (mu = 1)")
        p.add_argument("--same-field", dest="same_field", action="store_const", const=True,
                       help="fit on the field that generated the observations")
        p.add_argument("--k-obs", dest="k_obs", type=float)
        p.add_argument("--s-obs", dest="s_obs", type=float)
        p.add_argument("--grid", type=int, help="starts per axis for experiment-robustness")
        p.add_argument("--grid-lambda", dest="grid_lambda", type=_floats)
        p.add_argument("--grid-k", dest="grid_k", type=_floats)
        p.add_argument("--ns", type=_ints, help="box sizes for convergence-study")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(argv) -> RunConfig:
    args = build_parser().parse_args(argv)
    values = {}
    if args.config:
        try:
            values.update(read_config_file(args.config))
        except OSError as exc:
            raise ConfigError(str(exc)) from exc
    names = {f.name for f in fields(RunConfig)}
    for key, val in vars(args).items():
        if key in names and key != "command" and val is not None:
            values[key] = val
    try:
        return RunConfig(command=args.command, **values)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


# -- output helpers ----------------------------------------------------------------

def config_header(cfg: RunConfig) -> str:
    lines = [f"# homfit {cfg.command}"]
    for key, val in asdict(cfg).items():
        lines.append(f"# {key}={_fmt(val)}")
    return "\n".join(lines) + "\n"


def _fmt(val) -> str:
    if isinstance(val, (float, np.floating)):
        return repr(float(val))
    if isinstance(val, np.integer):
        return str(int(val))
    if isinstance(val, (tuple, list)):
        return ",".join(_fmt(v) for v in val)
    return str(val)


def _out_path(cfg: RunConfig, default: str) -> Path:
    return Path(cfg.out if cfg.out else default)


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix + path.suffix)


def write_csv(path: Path, cfg: RunConfig, header: list[str], rows, footer: Optional[list[str]] = None) -> None:
    with open(path, "w") as fh:
        fh.write(config_header(cfg))
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
        for line in footer or []:
            fh.write(f"# {line}\n")


def histogram(values, bins: int = 30):
    """Equal-width bins over [min, max], last bin closed on the right."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("histogram of an empty sample")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    counts, edges = np.histogram(v, bins=bins)
    return edges, counts


def relvar(values) -> float:
    """Relative variance with 1/M normalization."""
    return mc_summary(values).relvar


# -- commands -------------------------------------------------------------------------

def run_forward(cfg: RunConfig) -> int:
    law = ConstantLaw() if cfg.constant_field else WEIBULL
    fcfg = ForwardConfig(cfg.theta, cfg.n, cfg.dimension, cfg.m, cfg.seed, cfg.bc, cfg.tol, law,
                         cfg.worker_count)
    samples = sample_permeabilities(fcfg)
    summary = mc_summary(samples, cfg.n)
    rows = [(m, s.seed, cfg.n, cfg.dimension, cfg.lam, cfg.k, s.permeability) for m, s in enumerate(samples)]
    footer = [f"summary mean={summary.mean!r} relvar={summary.relvar!r} m={summary.m}"]
    if cfg.dimension == 1 and not cfg.constant_field and cfg.k > 8:
        footer.append(f"reference astar={astar_closed_form(cfg.theta)!r} "
                      f"relvar_leading={relvar_leading(cfg.k, cfg.n)!r}")
    path = _out_path(cfg, "forward.csv")
    write_csv(path, cfg, ["m", "seed", "n", "dim", "lambda", "k", "kstar"], rows, footer)
    print(footer[0])
    return EXIT_OK


def _observations(cfg: RunConfig, ref_seed: int):
    if cfg.k_obs is not None:
        return Observations(cfg.k_obs, cfg.s_obs, cfg.n)
    return generate_synthetic_obs(cfg.theta, draw_uniform_field(1, cfg.n, ref_seed))


def run_fit(cfg: RunConfig) -> int:
    ref_seed = derive_seed(cfg.seed, 0)
    fit_seed = ref_seed if cfg.same_field else derive_seed(cfg.seed, 1)
    obs = _observations(cfg, ref_seed)
    obj = Objective1D(draw_uniform_field(1, cfg.n, fit_seed), obs, cfg.weights)
    trace = newton_fit(obj, cfg.theta0, cfg.newton_options())
    record = fit_record(trace, cfg.theta0, fit_seed, cfg.n)
    record["observations"] = {"k_obs": obs.k_obs, "s_obs": obs.s_obs, "n": obs.n}
    record["config"] = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}
    path = _out_path(cfg, "fit.json")
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(json.dumps({k: record[k] for k in ("theta_opt", "iterations", "converged", "reason")}))
    return EXIT_OK


def robustness_grid(cfg: RunConfig) -> list[ThetaParams]:
    lams = np.linspace(*cfg.grid_lambda, cfg.grid) if cfg.grid > 1 else [cfg.grid_lambda[0]]
    ks = np.linspace(*cfg.grid_k, cfg.grid) if cfg.grid > 1 else [cfg.grid_k[0]]
    return [ThetaParams(float(l), float(k)) for l in lams for k in ks]


def robustness_results(cfg: RunConfig, starts=None):
    """Fit from every start on one field whose own observations are the target."""
    seed = derive_seed(cfg.seed, 0)
    u = draw_uniform_field(1, cfg.n, seed)
    obj = Objective1D(u, generate_synthetic_obs(cfg.theta, u), cfg.weights)
    out = []
    for th0 in starts if starts is not None else robustness_grid(cfg):
        trace = newton_fit(obj, th0, cfg.newton_options())
        lam, k = trace.iterates[-1].theta
        err = max(abs(lam - cfg.lam), abs(k - cfg.k))
        out.append((th0, trace, err))
    return out


def run_experiment_robustness(cfg: RunConfig) -> int:
    results = robustness_results(cfg)
    rows = []
    for th0, trace, err in results:
        lam, k = trace.iterates[-1].theta
        rows.append((th0.lam, th0.k, lam, k, trace.iterations, int(trace.converged), trace.reason, err))
    n_conv = sum(1 for _, t, e in results if t.converged)
    worst = max(e for _, _, e in results)
    footer = [f"summary converged={n_conv}/{len(results)} max_error={worst!r} "
              f"max_iterations={max(t.iterations for _, t, _ in results)}"]
    path = _out_path(cfg, "robustness.csv")
    write_csv(path, cfg, ["lambda0", "k0", "lambda_opt", "k_opt", "iterations", "converged", "reason", "error"],
              rows, footer)
    print(footer[0])
    return EXIT_OK


@dataclass
class NoiseRun:
    seeds: list
    lam_opt: np.ndarray
    k_opt: np.ndarray
    kstar0: np.ndarray
    s_n0: np.ndarray
    traces: list
    obs: Observations

    def summary(self) -> dict:
        return {
            "relvar_lambda_opt": relvar(self.lam_opt),
            "relvar_k_opt": relvar(self.k_opt),
            "relvar_kstar_theta0": relvar(self.kstar0),
            "relvar_s_n_k0": relvar(self.s_n0),
            "var_lambda_opt": float(np.var(self.lam_opt)),
            "var_k_opt": float(np.var(self.k_opt)),
            "mean_lambda_opt": float(np.mean(self.lam_opt)),
            "mean_k_opt": float(np.mean(self.k_opt)),
            "converged": int(sum(t.converged for t in self.traces)),
            "m": len(self.traces),
        }


def noise_experiment(cfg: RunConfig) -> NoiseRun:
    """Fix observations on a reference field, then fit on ``cfg.m`` independent fields."""
    ref_seed = derive_seed(cfg.seed, 0)
    obs = _observations(cfg, ref_seed)
    seeds = [derive_seed(cfg.seed, m + 1) for m in range(cfg.m)]
    theta0 = cfg.theta0
    opts = cfg.newton_options()

    def one(seed):
        u = draw_uniform_field(1, cfg.n, seed)
        obj = Objective1D(u, obs, cfg.weights)
        aux = obj.aux(theta0.lam, theta0.k)
        return newton_fit(obj, theta0, opts), cfg.n * aux.f, aux.s_n

    workers = cfg.worker_count
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    traces = [r[0] for r in results]
    return NoiseRun(
        seeds=seeds,
        lam_opt=np.array([t.iterates[-1].theta[0] for t in traces]),
        k_opt=np.array([t.iterates[-1].theta[1] for t in traces]),
        kstar0=np.array([r[1] for r in results]),
        s_n0=np.array([r[2] for r in results]),
        traces=traces,
        obs=obs,
    )


def run_experiment_noise(cfg: RunConfig) -> int:
    run = noise_experiment(cfg)
    summary = run.summary()
    summary["astar_theta0"] = astar_closed_form(cfg.theta0)
    summary["k_obs"], summary["s_obs"] = run.obs.k_obs, run.obs.s_obs
    path = _out_path(cfg, "noise.csv")
    rows = [(m, s, t.iterates[-1].theta[0], t.iterates[-1].theta[1], t.iterations, int(t.converged),
             run.kstar0[m], run.s_n0[m]) for m, (s, t) in enumerate(zip(run.seeds, run.traces))]
    footer = [f"{k}={_fmt(v)}" for k, v in summary.items()]
    write_csv(path, cfg, ["m", "seed", "lambda_opt", "k_opt", "iterations", "converged", "kstar_theta0", "s_n_k0"],
              rows, footer)
    hist_rows = []
    for name, values in (("k_opt", run.k_opt), ("lambda_opt", run.lam_opt),
                         ("kstar_theta0", run.kstar0), ("s_n_k0", run.s_n0)):
        edges, counts = histogram(values, cfg.bins)
        hist_rows += [(name, edges[i], edges[i + 1], int(c)) for i, c in enumerate(counts)]
    write_csv(_sibling(path, "_hist"), cfg, ["quantity", "bin_lo", "bin_hi", "count"], hist_rows)
    for line in footer:
        print(line)
    return EXIT_OK


def run_convergence_study(cfg: RunConfig) -> int:
    """Error-versus-N table; informational only, no rate is asserted."""
    law = ConstantLaw() if cfg.constant_field else WEIBULL
    ref = astar_closed_form(cfg.theta) if cfg.dimension == 1 else None
    rows = []
    for n in cfg.ns:
        fcfg = ForwardConfig(cfg.theta, n, cfg.dimension, cfg.m, cfg.seed, cfg.bc, cfg.tol, law,
                             cfg.worker_count, use_solver_1d=cfg.bc != "periodic")
        summary = mc_summary(sample_permeabilities(fcfg), n)
        half_width = 1.96 * math.sqrt(summary.relvar / summary.m) * summary.mean
        err = "" if ref is None else summary.mean - ref
        rows.append((n, cfg.m, summary.mean, half_width, summary.relvar, "" if ref is None else ref, err))
        log.info("n=%d mean=%.6g relvar=%.3g", n, summary.mean, summary.relvar)
    path = _out_path(cfg, "convergence.csv")
    write_csv(path, cfg, ["n", "m", "mean", "ci95_half_width", "relvar", "reference", "error"], rows)
    for row in rows:
        print(",".join(_fmt(v) for v in row))
    return EXIT_OK


RUNNERS = {
    "forward": run_forward,
    "fit": run_fit,
    "experiment-robustness": run_experiment_robustness,
    "experiment-noise": run_experiment_noise,
    "convergence-study": run_convergence_study,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.INFO if "-v" in argv or "--verbose" in argv else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_CONFIG if exc.code else EXIT_OK
    except ConfigError as exc:
        print(f"homfit: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return RUNNERS[cfg.command](cfg)
    except (SolverError, DegenerateFieldError, DomainError, FloatingPointError) as exc:
        print(f"homfit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
