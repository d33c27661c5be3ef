from __future__ import annotations

import numpy as np
import pytest

from entitrend.models.querylog import FrequencyTable, WindowConfig


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False,
        help="run the desk-scale end-to-end tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale end-to-end run")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def random_table(rng: np.random.Generator, n_entities: int, n_windows: int,
                 density: float = 0.5, max_count: int = 30) -> FrequencyTable:
    """Builds a sparse table with some counts of exactly one and some gaps."""
    counts = {}
    for j in range(n_entities):
        for i in range(1, n_windows + 1):
            if rng.random() < density:
                counts[(i, f"entity {j:03d}")] = int(rng.integers(1, max_count + 1))
    return FrequencyTable(WindowConfig(n_windows=n_windows), counts)


@pytest.fixture
def make_table():
    return random_table


@pytest.fixture
def small_table() -> FrequencyTable:
    counts = {
        (1, "alpha"): 4, (2, "alpha"): 2, (3, "alpha"): 6,
        (1, "beta"): 10, (2, "beta"): 10, (3, "beta"): 5,
        (2, "gamma"): 3, (3, "gamma"): 3,
        (3, "delta"): 7,
        (1, "eps"): 1,
    }
    return FrequencyTable(WindowConfig(n_windows=3), counts)
