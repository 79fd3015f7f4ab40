import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hazardtwin.district import generate_district
from hazardtwin.scenario import build_timeline

settings.register_profile("hazardtwin", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("hazardtwin")


@pytest.fixture(scope="session")
def timeline():
    return build_timeline()


@pytest.fixture(scope="session")
def district():
    return generate_district(seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = []


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` logs one acceptance line and asserts ``ok``."""

    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}"
        _CRITERIA.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
