import pytest

from helpers import ACCEPTANCE_LINES, load_published


@pytest.fixture(scope="session")
def published():
    return load_published()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
