import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gibbstf import SamplerConfig, StraussModel, Window, sample_replicates, theta_from_beta_gamma

settings.register_profile("ci", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

R = 0.05
BETA, GAMMA = 100.0, 0.5
CARRIER = Window.square(-R, 3 + R)

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(autouse=True)
def _quiet_identifiability_warning():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="K = p")
        yield


@pytest.fixture(scope="session")
def strauss():
    return StraussModel(R)


@pytest.fixture(scope="session")
def theta_star():
    return theta_from_beta_gamma(BETA, GAMMA)


@pytest.fixture(scope="session")
def study_patterns(strauss, theta_star):
    """200 Strauss patterns on [0,3]^2 dilated by R, seeds 0..199."""
    return sample_replicates(strauss, theta_star, CARRIER, 200, SamplerConfig(), base_seed=0)


@pytest.fixture(scope="session")
def sandwich_patterns(strauss, theta_star):
    """Independent patterns at theta_star for Monte-Carlo E and Sigma."""
    return sample_replicates(strauss, theta_star, CARRIER, 50, SamplerConfig(), base_seed=10_000)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
