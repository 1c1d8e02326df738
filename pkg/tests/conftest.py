import numpy as np
import pytest

from pavrl.casestudy import CaseStudyConfig, generate_case_study
from pavrl.domain import fit_agent_normalization
from pavrl.envmodel import EnvironmentConfig, FixedFleetSampler, MaintenanceEnv


@pytest.fixture(scope="session")
def fleet():
    return generate_case_study(CaseStudyConfig(), seed=0)


@pytest.fixture(scope="session")
def agent_norm(fleet):
    return fit_agent_normalization(fleet)


@pytest.fixture
def env(fleet, agent_norm):
    return MaintenanceEnv(EnvironmentConfig(), FixedFleetSampler(fleet), agent_norm, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
