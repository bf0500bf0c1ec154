import numpy as np
import pytest

from asmatch.graph import Graph


def q3():
    return Graph([0, 1, 0], [(0, 1), (1, 2), (0, 2)], num_labels=3)


def t4():
    return Graph([0, 1, 0, 2], [(0, 1), (1, 2), (0, 2), (2, 3)], num_labels=3)


def random_graph(rng, n, p=0.4, num_labels=3, connected=False):
    """Erdos-Renyi graph with uniform labels; optionally a spanning path is added first."""
    edges = set()
    if connected:
        perm = rng.permutation(n)
        for a, b in zip(perm[:-1], perm[1:]):
            edges.add((min(a, b), max(a, b)))
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < p:
                edges.add((u, v))
    return Graph(rng.integers(0, num_labels, n), sorted(edges), num_labels=num_labels)


def random_instance(rng, max_q=5, max_t=8):
    nt = int(rng.integers(2, max_t + 1))
    nq = int(rng.integers(1, min(max_q, nt) + 1))
    return random_graph(rng, nq, 0.5), random_graph(rng, nt, 0.4)


@pytest.fixture
def Q3():
    return q3()


@pytest.fixture
def T4():
    return t4()


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
