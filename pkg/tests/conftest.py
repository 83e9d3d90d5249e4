import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def fd_derivative(fn, x, i, rel_step=1e-6):
    """Central difference of ``fn`` along coordinate ``i`` with a relative step."""
    x = np.asarray(x, dtype=float)
    h = rel_step * max(abs(x[i]), 1.0)
    e = np.zeros_like(x)
    e[i] = h
    return (np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * h)


def fd_gradient(fn, x, rel_step=1e-6):
    return np.array([fd_derivative(fn, x, i, rel_step) for i in range(len(x))])


def fd_hessian(grad_fn, x, rel_step=1e-6):
    """Jacobian of an analytic gradient; symmetrized."""
    H = np.column_stack([fd_derivative(grad_fn, x, i, rel_step) for i in range(len(x))])
    return 0.5 * (H + H.T)


def assert_rel_close(actual, expected, rtol=1e-5, atol=1e-12):
    """Relative comparison; entries of magnitude below ``atol`` compare absolutely."""
    a = np.asarray(actual, dtype=float)
    b = np.asarray(expected, dtype=float)
    diff = np.abs(a - b)
    small = np.abs(b) < atol
    ok = np.where(small, diff <= atol, diff <= rtol * np.abs(b))
    assert np.all(ok), f"actual={a}\nexpected={b}\nrelative error={diff / np.maximum(np.abs(b), atol)}"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance report, one line per criterion."""
    import sys

    mod = sys.modules.get("test_acceptance")
    report = getattr(mod, "REPORT", None)
    if report:
        terminalreporter.section("acceptance criteria")
        for key in sorted(report):
            terminalreporter.write_line(report[key])
