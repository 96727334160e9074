import numpy as np
import pytest

from appgraph.graph import BipartiteGraph, Edges

# Decomposition example with three APPs and eight users: user u1 installed
# both p2 and p3. Original ids are 1-based; dense ids are original - 1.
FIG2_EDGES = [
    (4, 1), (5, 1), (6, 1),
    (1, 2), (2, 2), (3, 2),
    (7, 3), (8, 3), (1, 3),
]


@pytest.fixture
def fig2_graph() -> BipartiteGraph:
    return BipartiteGraph.from_edges([(u, a, 0) for u, a in FIG2_EDGES])


def random_edges(rng: np.random.Generator, n_users=60, n_apps=12, n_rows=400, n_days=10) -> Edges:
    return Edges(
        rng.integers(n_users, size=n_rows),
        rng.integers(n_apps, size=n_rows),
        rng.integers(n_days, size=n_rows),
    )


# Acceptance verdicts, printed after the run so they survive output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
