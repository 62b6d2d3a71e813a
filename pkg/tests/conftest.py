import numpy as np
import pytest

from emrgnn.graph import build_graph, normalize


def random_edges(rng, n, p):
    """Independent Bernoulli(p) undirected edges, returned once per pair."""
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    return np.stack([iu[keep], ju[keep]], axis=1)


def random_graph(seed, n=20, R=2, p=0.2):
    rng = np.random.default_rng(seed)
    return build_graph([random_edges(rng, n, p) for _ in range(R)], n)


def dense_normalized(edges, n):
    """Normalised adjacency from the textbook definition, built densely."""
    A = np.zeros((n, n))
    for i, j in edges:
        if i != j:
            A[i, j] = A[j, i] = 1.0
    At = A + np.eye(n)
    d = At.sum(axis=1)
    return At / np.sqrt(np.outer(d, d))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_rels():
    return normalize(random_graph(7, n=20, R=3, p=0.25))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
