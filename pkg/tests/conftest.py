import numpy as np
import pytest

from sepp.geometry import CovariateMap, GridSpec
from sepp.model import EventCatalog, ModelParams
from sepp.simulate import SimConfig, simulate


def small_cov(n=10, d=5.0, seed=0):
    """n x n grid of d-unit cells with two random covariates."""
    rng = np.random.default_rng(seed)
    grid = GridSpec(0.0, 0.0, d, d, n, n)
    return CovariateMap.from_grid(grid, rng.normal(size=(n * n, 2)) * 0.5)


@pytest.fixture
def cov():
    return small_cov()


@pytest.fixture
def params():
    return ModelParams(beta=[-6.0, 0.4, -0.3], theta={"target": 0.4, "alarm": 0.2}, omega=3.0, sigma2=9.0)


@pytest.fixture
def catalog(cov, params):
    sim = simulate(SimConfig(cov, params, 60.0, seed=11, indicator_rates={"alarm": 2e-3}))
    return sim.catalog


def make_catalog(cov, rows, T, marks=("target",)):
    rows = np.asarray(rows, dtype=float)
    codes = rows[:, 3].astype(np.int64) if rows.shape[1] > 3 else None
    return EventCatalog(rows[:, 0], rows[:, 1], rows[:, 2], codes, domain=cov.domain, T=T, target_mark=marks[0],
                        indicator_marks=marks[1:])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
