import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cirche.ring import find_prime

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SMALL_SIZES = (64, 256, 512)


@pytest.fixture(scope="session")
def contexts():
    return {n: find_prime(41, n) for n in SMALL_SIZES}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(number, ok, detail)."""

    def record(number, ok, detail=""):
        ACCEPTANCE[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
