import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from delaysplit.harness import random_kernel
from delaysplit.model import lag_zero, scalar_delay, zero_kernel

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def rotation(omega=1.0, r=0.1):
    return lag_zero([[0.0, -omega], [omega, 0.0]], r)


ORACLE_KERNELS = {
    "zero": lambda: zero_kernel(1, 0.1),
    "rotation": lambda: rotation(1.0, 0.1),
    "scalar": lambda: scalar_delay(1.0, 0.1),
}

# seeded random kernels with M e r in [0.1, 0.6]
RANDOM_SEEDS = (100, 101, 102, 103, 104)


@pytest.fixture(params=sorted(ORACLE_KERNELS))
def oracle_kernel(request):
    return ORACLE_KERNELS[request.param]()


@pytest.fixture(scope="session")
def random_kernels():
    return [random_kernel(s, mer=(0.1, 0.6)) for s in RANDOM_SEEDS]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
