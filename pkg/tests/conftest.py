import math

import numpy as np
import pytest

from cograte.antenna import build_geometry
from cograte.scenario import Scenario, load_config

DEG = math.pi / 180.0


@pytest.fixture(scope="session")
def antenna7():
    return build_geometry(7, -55 * DEG, 55 * DEG)


@pytest.fixture(scope="session")
def default_scenario():
    return Scenario(load_config())


def scenario_with(**sections):
    raw = {"schema_version": 1}
    raw.update(sections)
    return Scenario(load_config(raw))


def cn(rng, shape, var=1.0):
    z = rng.standard_normal(tuple(shape) + (2,))
    return np.sqrt(var / 2.0) * (z[..., 0] + 1j * z[..., 1])


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES,
                           key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
