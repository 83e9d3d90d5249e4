import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from homfit.cli import (
    ConfigError,
    RunConfig,
    config_from_args,
    histogram,
    main,
    noise_experiment,
    robustness_results,
)
from homfit.special_math import relvar_leading


def read_rows(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    header = lines[0].split(",")
    return header, [dict(zip(header, l.split(","))) for l in lines[1:]]


def comments(path):
    return [l for l in path.read_text().splitlines() if l.startswith("#")]


# -- exit codes -----------------------------------------------------------------------

@pytest.mark.parametrize("argv", [
    ["forward", "--k", "3"],
    ["forward", "--dim", "3"],
    ["forward", "--m", "1"],
    ["fit", "--k", "8"],
    ["fit", "--dim", "2"],
    ["experiment-noise", "--k0", "7"],
    ["forward", "--weights", "0,0"],
    ["forward", "--k-obs", "1.0"],
    ["bogus"],
    ["forward", "--bc", "neumann"],
])
def test_config_errors_exit_2(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path / "x.csv")] if argv != ["bogus"] else argv) == 2


def test_missing_config_file_exit_2(tmp_path):
    assert main(["forward", "--config", str(tmp_path / "none.cfg")]) == 2


def test_solver_failure_exit_3(tmp_path):
    argv = ["forward", "--dim", "2", "--n", "8", "--m", "2", "--tol", "1e-300",
            "--threads", "1", "--out", str(tmp_path / "f.csv")]
    assert main(argv) == 3


def test_nonpositive_observations_exit_2(tmp_path):
    assert main(["fit", "--n", "100", "--k-obs", "1", "--s-obs", "0", "--out", str(tmp_path / "f.json")]) == 2


# -- forward ------------------------------------------------------------------------------

def test_forward_constant_field(tmp_path):
    out = tmp_path / "f.csv"
    assert main(["forward", "--n", "50", "--m", "5", "--lambda", "1.2", "--constant-field",
                 "--out", str(out)]) == 0
    header, rows = read_rows(out)
    assert header == ["m", "seed", "n", "dim", "lambda", "k", "kstar"]
    assert len(rows) == 5
    assert all(float(r["kstar"]) == pytest.approx(1.2**4, rel=1e-14) for r in rows)


def test_forward_byte_identical_rerun(tmp_path):
    out = tmp_path / "a.csv"
    argv = ["forward", "--dim", "2", "--n", "6", "--m", "4", "--seed", "3", "--out", str(out)]
    assert main(argv) == 0
    first = out.read_bytes()
    assert main(argv) == 0
    assert out.read_bytes() == first


def test_forward_independent_of_threads(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    base = ["forward", "--n", "1000", "--m", "8", "--seed", "5"]
    main(base + ["--out", str(a), "--threads", "1"])
    main(base + ["--out", str(b), "--threads", "3"])
    strip = lambda p: [l for l in p.read_text().splitlines()
                       if not l.startswith(("# threads=", "# out="))]
    assert strip(a) == strip(b)


def test_forward_header_embeds_config(tmp_path):
    out = tmp_path / "f.csv"
    main(["forward", "--n", "20", "--m", "3", "--seed", "99", "--out", str(out)])
    head = comments(out)
    assert "# seed=99" in head and "# n=20" in head and "# command=forward" in head


def test_forward_relvar_matches_leading_order(tmp_path):
    out = tmp_path / "f.csv"
    assert main(["forward", "--out", str(out)]) == 0
    _, rows = read_rows(out)
    x = np.array([float(r["kstar"]) for r in rows])
    assert x.size == 500
    rel = np.var(x) / np.mean(x) ** 2
    summary = [c for c in comments(out) if c.startswith("# summary")][0]
    assert math.isclose(float(summary.split("relvar=")[1].split()[0]), rel, rel_tol=1e-12)
    rng = np.random.default_rng(0)
    boot = [np.var(s) / np.mean(s) ** 2 for s in (x[rng.integers(0, 500, 500)] for _ in range(1000))]
    assert abs(rel - relvar_leading(15.0, 100_000)) <= 3 * np.std(boot)


def test_forward_pnm_bc(tmp_path):
    out = tmp_path / "f.csv"
    assert main(["forward", "--dim", "2", "--n", "8", "--m", "3", "--bc", "pnm", "--out", str(out)]) == 0
    _, rows = read_rows(out)
    assert all(float(r["kstar"]) > 0 for r in rows)


# -- config precedence -------------------------------------------------------------------------

def test_config_file_and_flag_precedence(tmp_path):
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text("# manifest\nn = 300\nm = 7\nseed = 11\nweights = 2, 0.5\nfixed-step = yes\n")
    cfg = config_from_args(["fit", "--config", str(cfg_path), "--m", "9"])
    assert (cfg.n, cfg.m, cfg.seed, cfg.weights, cfg.fixed_step) == (300, 9, 11, (2.0, 0.5), True)


def test_config_file_unknown_key(tmp_path):
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text("colour = red\n")
    with pytest.raises(ConfigError):
        config_from_args(["forward", "--config", str(cfg_path)])


def test_default_box_sizes():
    assert RunConfig("forward").n == 100_000
    assert RunConfig("forward", dimension=2).n == 32


# -- fit ------------------------------------------------------------------------------------------

def test_fit_json(tmp_path):
    out = tmp_path / "fit.json"
    assert main(["fit", "--n", "20000", "--same-field", "--out", str(out)]) == 0
    rec = json.loads(out.read_text())
    for key in ("theta0", "theta_opt", "iterations", "converged", "reason", "value", "grad_norm", "seed", "n"):
        assert key in rec
    assert rec["converged"] and rec["n"] == 20000
    assert max(abs(rec["theta_opt"][0] - 1.0), abs(rec["theta_opt"][1] - 15.0)) <= 1e-6


def test_fit_independent_field_with_given_obs(tmp_path):
    out = tmp_path / "fit.json"
    assert main(["fit", "--n", "20000", "--k-obs", "1.19", "--s-obs", "2e-6", "--out", str(out)]) == 0
    rec = json.loads(out.read_text())
    assert rec["observations"]["k_obs"] == 1.19


# -- experiments ------------------------------------------------------------------------------------

def test_robustness_small_grid(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["experiment-robustness", "--n", "20000", "--grid", "3", "--out", str(out)]) == 0
    header, rows = read_rows(out)
    assert header[:4] == ["lambda0", "k0", "lambda_opt", "k_opt"]
    assert len(rows) == 9
    assert all(r["converged"] == "1" and float(r["error"]) <= 1e-6 for r in rows)


def test_robustness_single_start_at_target():
    cfg = RunConfig("experiment-robustness", n=5000, grid=1, grid_lambda=(1.0, 1.0), grid_k=(15.0, 15.0))
    (_, trace, err), = robustness_results(cfg)
    assert trace.iterations <= 1 and err <= 1e-12


def test_noise_small_run(tmp_path):
    out = tmp_path / "noise.csv"
    assert main(["experiment-noise", "--n", "5000", "--m", "20", "--bins", "7", "--out", str(out)]) == 0
    _, rows = read_rows(out)
    assert len(rows) == 20
    hist = tmp_path / "noise_hist.csv"
    _, hrows = read_rows(hist)
    for q in ("k_opt", "lambda_opt", "kstar_theta0", "s_n_k0"):
        counts = [int(r["count"]) for r in hrows if r["quantity"] == q]
        assert len(counts) == 7 and sum(counts) == 20
    text = out.read_text()
    assert "np.float64" not in text and "relvar_lambda_opt=" in text


def test_noise_reproducible():
    cfg = RunConfig("experiment-noise", n=2000, m=4, threads=1)
    a, b = noise_experiment(cfg), noise_experiment(cfg)
    assert np.array_equal(a.lam_opt, b.lam_opt) and np.array_equal(a.k_opt, b.k_opt)


def test_convergence_study(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["convergence-study", "--ns", "4,8", "--m", "3", "--out", str(out)]) == 0
    header, rows = read_rows(out)
    assert header == ["n", "m", "mean", "ci95_half_width", "relvar", "reference", "error"]
    assert [r["n"] for r in rows] == ["4", "8"]


# -- histogram ---------------------------------------------------------------------------------------

def test_histogram_examples():
    edges, counts = histogram([0, 1, 2, 3], 2)
    assert list(counts) == [2, 2]
    assert edges[0] == 0 and edges[-1] == 3
    _, counts = histogram([4.2] * 9, 5)
    assert sorted(counts)[-1] == 9 and sum(counts) == 9


def test_histogram_empty():
    with pytest.raises(ValueError):
        histogram([], 3)


def test_histogram_uniform_binomial():
    x = np.random.default_rng(4).uniform(size=100_000)
    _, counts = histogram(x, 10)
    sigma = math.sqrt(100_000 * 0.1 * 0.9)
    assert np.all(np.abs(counts - 10_000) <= 3 * sigma)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200), st.integers(1, 40))
def test_histogram_counts_sum(values, bins):
    edges, counts = histogram(values, bins)
    assert counts.sum() == len(values)
    assert len(edges) == bins + 1
