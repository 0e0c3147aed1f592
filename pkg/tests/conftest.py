import numpy as np
import pytest


@pytest.fixture
def toy_kernel():
    return np.array([[10.0, 2.0, 1.0], [2.0, 10.0, 3.0], [1.0, 3.0, 10.0]])


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
