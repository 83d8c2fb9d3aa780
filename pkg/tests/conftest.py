import numpy as np
import pytest

from episir import GridSpec, ModelParams, solve_myopic, solve_pbe, solve_spp
from episir.solvers import solve_prme


@pytest.fixture(scope="session")
def params():
    return ModelParams()


@pytest.fixture(scope="session")
def grid():
    return GridSpec().build()


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec(n_S=30, n_I=81, I_median=1e-4).build()


@pytest.fixture(scope="session")
def pbe(params, grid):
    return solve_pbe(params, grid)


@pytest.fixture(scope="session")
def spp(params, grid):
    return solve_spp(params, grid)


@pytest.fixture(scope="session")
def myopic(params, grid):
    return solve_myopic(params, grid)


@pytest.fixture(scope="session")
def pbe_sigma1(params, grid):
    return solve_pbe(params.replace(sigma=1.0), grid)


@pytest.fixture(scope="session")
def prme(params, grid):
    return solve_prme(params, grid, n_mu=21)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        terminalreporter.write_line(lines[key])
