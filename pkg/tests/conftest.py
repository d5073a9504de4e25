import numpy as np
import pytest

from slotalign.graph import Graph


def random_graph(rng, n, d=0, p=0.4, features="gauss"):
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    if features == "binary":
        x = (rng.random((n, d)) < 0.3).astype(float)
    else:
        x = rng.standard_normal((n, d))
    return Graph(n, np.stack([iu[keep], ju[keep]], axis=1), x)


def er_graph(rng, n, avg_degree, d, features="gauss"):
    return random_graph(rng, n, d, p=avg_degree / (n - 1), features=features)


@pytest.fixture
def p3():
    return Graph(3, [(0, 1), (1, 2)], np.eye(3))


@pytest.fixture
def rng():
    return np.random.default_rng(20231018)


# -- acceptance report --------------------------------------------------------

ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion."""

    def emit(number, passed, text):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {text}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
