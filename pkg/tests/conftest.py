import pytest
from hypothesis import settings

from dronesense.signal import SensorNetwork, SignalModel

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture
def model():
    return SignalModel(1.0, 2.0, (0.5, 6.5), 16)


@pytest.fixture
def single():
    return SensorNetwork.homogeneous(1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
