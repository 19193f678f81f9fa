import os

import pytest
from hypothesis import settings

from qmpemba.qstate import SystemParams

settings.register_profile("default", deadline=None, max_examples=60)
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def base():
    """Reference point used throughout: omega_y=0.01, omega_z=2, gamma=5."""
    return SystemParams.symmetric(0.01, 2.0, 5.0)


@pytest.fixture
def weak():
    return SystemParams.symmetric(0.01, 2.0, 1.0)


@pytest.fixture
def record_criterion():
    def _record(line: str):
        ACCEPTANCE_LINES.append(line)
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
