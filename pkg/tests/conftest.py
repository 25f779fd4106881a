# content of conftest.py
import logging
import os
import zlib

import numpy as np
import pytest

from gflnet.netgraph import Line, NetworkModel, radial_chain
from gflnet.spl import RadialFamilySpec

pytest.RUN_TESTS_DIR = os.getcwd()

def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow tests"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: mark test as slow to run")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        # --runslow given in cli: do not skip slow tests
        return
    skip_slow = pytest.mark.skip(reason="need --runslow option to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng(request):
    # seeded per test
    return np.random.default_rng(zlib.crc32(request.node.name.encode()))


@pytest.fixture
def logger():
    return logging.getLogger("gflnet.tests")


@pytest.fixture
def radial_spec():
    return RadialFamilySpec(eps_i=0.001, n_max=40)


@pytest.fixture
def radial3():
    return radial_chain(3, 0.02, 2e-5)


@pytest.fixture
def loaded_network():
    """Grid - load bus 1 - inverters at buses 2 and 3, all lines inductive."""
    lines = [
        Line(bus_from=0, bus_to=1, r_ohm=0.02, l_henry=2e-5),
        Line(bus_from=1, bus_to=2, r_ohm=0.03, l_henry=1e-5),
        Line(bus_from=1, bus_to=3, r_ohm=0.01, l_henry=3e-5),
    ]
    return NetworkModel(n_inverters=2, n_loads=1, lines=lines, load_resistances=[20.0])


@pytest.fixture
def resistive_network():
    """Grid - load bus 1 - inverters at 2 and 3, purely resistive lines."""
    lines = [
        Line(bus_from=0, bus_to=1, r_ohm=0.05, l_henry=0.0),
        Line(bus_from=1, bus_to=2, r_ohm=0.04, l_henry=0.0),
        Line(bus_from=2, bus_to=3, r_ohm=0.03, l_henry=0.0),
    ]
    return NetworkModel(n_inverters=2, n_loads=1, lines=lines, load_resistances=[25.0])
