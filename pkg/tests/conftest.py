import sys

import numpy as np
import pytest
from hypothesis import settings

from geoqrypt.localization import Scenario

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def square_km():
    """Four stations on a 1 km square, c sigma_t = 1.8 m."""
    return Scenario.square(500.0, 1.8, (0.0, 0.0), p_c=0.99, seed=11)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
