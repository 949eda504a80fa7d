import pytest

from lcfusion.scenario import Scenario, gen_trajectory, ideal_imu


@pytest.fixture(scope="session")
def default_truth():
    return gen_trajectory(Scenario())


@pytest.fixture(scope="session")
def default_ideal(default_truth):
    return ideal_imu(default_truth)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
