import pytest

from atomlens.units import RB87, GaussianBeam

# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def fig3_beam():
    return GaussianBeam(-2e-28, 30e-6)


@pytest.fixture(scope="session")
def rb87():
    return RB87


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
