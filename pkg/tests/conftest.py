from pathlib import Path

import numpy as np
import pytest

from tablescene.demo import toy_car
from tablescene.geometry import box_mesh

REPO = Path(__file__).resolve().parents[1]
DEMO_BUNDLE = REPO / "fixtures" / "demo_scene"


@pytest.fixture(scope="session")
def car_mesh():
    return toy_car()


@pytest.fixture
def unit_cube():
    return box_mesh((1.0, 1.0, 1.0), (0.5, 0.5, 0.5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def demo_bundle_path():
    return DEMO_BUNDLE


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(pytestconfig):
    return pytestconfig.stash.setdefault(ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
