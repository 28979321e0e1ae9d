import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from heatlab.grid import ControlWindow, build_grid

settings.register_profile(
    "heatlab", deadline=None, max_examples=int(os.environ.get("HEATLAB_HYPOTHESIS_EXAMPLES", 40)),
    suppress_health_check=[HealthCheck.too_slow], derandomize=True,
)
settings.load_profile("heatlab")


@pytest.fixture(scope="session")
def grid101():
    return build_grid(0.0, 1.0, 101, "neumann")


@pytest.fixture(scope="session")
def grid101_dir():
    return build_grid(0.0, 1.0, 101, "dirichlet")


@pytest.fixture(scope="session")
def window101(grid101):
    return ControlWindow(grid101, (0.3, 0.7), (0.45, 0.55))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)



def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
