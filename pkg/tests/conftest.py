import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ergocobot.environment import Workspace
from ergocobot.kinematics import HumanModel, Point2

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def ws():
    return Workspace()


@pytest.fixture
def roomy_model():
    """Long-armed model that reaches the whole workspace pain-free or not."""
    return HumanModel(1.0, 1.0, Point2(2.85, 0.95))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
