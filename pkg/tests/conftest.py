import numpy as np
import pytest

from tailsim.simcore import make_rng


@pytest.fixture
def rng():
    return make_rng(12345, 0)


def central_difference(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at vector ``x``."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# filled by tests/test_acceptance.py, echoed at the end of the run
CRITERIA_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA_RESULTS):
            terminalreporter.write_line(CRITERIA_RESULTS[n])
