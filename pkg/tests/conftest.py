import numpy as np
import pytest


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow replication tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_problem(rng):
    """n = 60 uniform sites, X = [1, x1], y from a smooth field plus noise."""
    n = 60
    coords = rng.uniform(size=(n, 2))
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    w = np.sin(3 * coords[:, 0]) + np.cos(2 * coords[:, 1])
    y = X @ np.array([1.0, -2.0]) + w + 0.3 * rng.standard_normal(n)
    return coords, X, y
