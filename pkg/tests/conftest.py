import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ergolab import models
from ergolab.lyapunov_verify import DomainSpec

settings.register_profile("ergolab", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ergolab")


@pytest.fixture(scope="session")
def ex21():
    return models.example21()


@pytest.fixture(scope="session")
def V():
    return models.v21()


@pytest.fixture
def unit_ball():
    return DomainSpec.ball([0.0], 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA = []


@pytest.fixture
def record_criterion():
    """Store one acceptance line; all lines are printed in the terminal summary."""
    def record(number, passed, detail):
        CRITERIA.append((number, bool(passed), detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(CRITERIA, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
