import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from porodiff import _kernels

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session", params=sorted(_kernels.backends()))
def backend(request):
    """Each importable kernel backend in turn."""
    return _kernels.backends()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
