import numpy as np
import pytest

from mtga import autodiff as ad


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def float64():
    with ad.default_dtype(np.float64):
        yield


def pytest_terminal_summary(terminalreporter):
    from mtga.testing import ACCEPTANCE_RESULTS
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(line)
