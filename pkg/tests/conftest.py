import numpy as np
import pytest

from vesselwave.model import REFERENCE
from vesselwave import nonlinear, spectral

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture(scope="session")
def R():
    return REFERENCE


@pytest.fixture(scope="session")
def xi_report(R):
    return spectral.find_xi_star(R)


@pytest.fixture(scope="session")
def xi_star(xi_report):
    return xi_report.xi_star


@pytest.fixture(scope="session")
def onset(R, xi_star):
    return nonlinear.discrete_onset(xi_star, 128, 64, R)


@pytest.fixture(scope="session")
def branch(R, xi_star, onset):
    return nonlinear.continue_branch(xi_star, 20, 5e-5, R, onset=onset)


@pytest.fixture(scope="session")
def coarse_branch(R, xi_star):
    return nonlinear.continue_branch(xi_star, 20, 5e-5, R, nw=64, nz=32)


@pytest.fixture(scope="session")
def fit_branch(R, xi_star, onset):
    eps = np.geomspace(1e-4 * R.d, 1e-2 * R.d, 9)
    return nonlinear.continue_branch(xi_star, 0, 0, R, onset=onset, eps_values=eps)
