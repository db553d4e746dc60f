import numpy as np
import pytest

from qgtbp.graph import from_dense_matrix

# Example assignment matrix with pools {1,2,6,8}, {1,4,5,6}, {2,3,4,7}, {3,5,7,8}
EXAMPLE_MATRIX = [
    [1, 1, 0, 0, 0, 1, 0, 1],
    [1, 0, 0, 1, 1, 1, 0, 0],
    [0, 1, 1, 1, 0, 0, 1, 0],
    [0, 0, 1, 0, 1, 0, 1, 1],
]


@pytest.fixture
def example_graph():
    return from_dense_matrix(EXAMPLE_MATRIX)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
