import numpy as np
import pytest

from musicsim import kernels


@pytest.fixture(params=sorted(kernels.IMPLEMENTATIONS))
def impl(request):
    """Kernel table for each backend."""
    return kernels.IMPLEMENTATIONS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
