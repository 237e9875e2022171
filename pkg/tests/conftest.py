import pytest

from cablemf import kernel, model
from cablemf.config import RunConfig


def brownian_coefficients(b=None, sigma=None, G=None, H=None):
    return model.CoefficientSet(
        b or model.zero_function(), sigma or model.constant(1.0),
        H or model.zero_function(), G or model.zero_function(), 1.0, 1.0)


@pytest.fixture(scope="session")
def bench():
    return RunConfig.load()


@pytest.fixture(scope="session")
def bench_cs(bench):
    return bench.coefficients()


@pytest.fixture(scope="session")
def hex_rho():
    return kernel.hex_gauss()


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
