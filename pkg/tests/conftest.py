import math

import numpy as np
import pytest

from omniforge.geometry import cube_layout
from omniforge.projection import smooth_test_erp


@pytest.fixture(scope="session")
def layout110():
    return cube_layout(math.radians(110), 64)


@pytest.fixture(scope="session")
def small_erp():
    return smooth_test_erp(256, 128)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
