import os

import pytest
from hypothesis import settings

from caclab.experiments import train_fncac
from caclab.config import parse_config_text
from caclab.traffic import SystemConfig, canonical_classes

settings.register_profile("default", deadline=None, max_examples=60)
settings.register_profile("ci", deadline=None, max_examples=25)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_experiment():
    return parse_config_text("[system]\nchannels = 30\n")


@pytest.fixture(scope="session")
def trained(default_experiment):
    """The default FNCAC training run, shared across tests."""
    return train_fncac(default_experiment)


@pytest.fixture
def pool30():
    return SystemConfig(30, canonical_classes(1.0, 1.0))
