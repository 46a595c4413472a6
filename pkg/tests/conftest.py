import numpy as np
import pytest

from obserr.config import ExperimentConfig
from obserr.experiment import build_testbed, run_case, setup_kind


@pytest.fixture(scope="session")
def testbed():
    return build_testbed(ExperimentConfig())


@pytest.fixture(scope="session")
def basic(testbed):
    return setup_kind(testbed, "basic")


@pytest.fixture(scope="session")
def pde(testbed):
    return setup_kind(testbed, "pde")


@pytest.fixture(scope="session")
def cases(testbed, basic, pde):
    """Default-seed cases keyed by (kind, snr)."""
    return {(ks.kind, snr): run_case(testbed, ks, snr) for ks in (basic, pde) for snr in (0.1, 0.02)}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def report_line(request):
    """Print one PASS/FAIL line and keep it for the end-of-session summary."""

    def emit(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        print(line)
        request.config.acceptance_lines.append(line)
        return passed

    return emit
