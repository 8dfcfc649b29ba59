import numpy as np
import pytest

from incopt.graph import TransactionGraph
from incopt.model import ModelConfig, init_params
from incopt.samples import Samples


def random_graph(n=6, p_dim=3, d_dim=2, p_edge=0.5, seed=0, min_edges=1):
    """Small random undirected graph with distinct edges and no self-loops."""
    rng = np.random.default_rng(seed)
    while True:
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p_edge]
        if len(pairs) >= min_edges:
            break
    x = rng.normal(size=(n, p_dim))
    z = rng.normal(size=(len(pairs), d_dim))
    return TransactionGraph.from_edges(x, pairs, z)


def random_batch(graph, size=5, seed=0, treatments=(1.0, 2.0, 5.0, 10.0)):
    rng = np.random.default_rng(seed)
    merchants = rng.integers(0, graph.node_count, size=size)
    c = rng.choice(treatments, size=size)
    y = rng.uniform(0.5, 6.0, size=size)
    return Samples(merchants, c, y)


def tiny_setup(aggregator="mean", activation="relu", seed=0, depth=1, width=3, n=6, batch=5):
    graph = random_graph(n=n, seed=seed)
    cfg = ModelConfig(node_dim=graph.node_dim, edge_dim=graph.edge_dim, kind="ge", depth=depth, width=width,
                      fanouts=(4,) * depth, aggregator=aggregator, activation=activation)
    params = init_params(cfg, seed)
    return graph, cfg, params, random_batch(graph, batch, seed)


@pytest.fixture
def path_graph():
    # a - b - c with distinct edge features
    x = np.array([[1.0], [2.0], [3.0]])
    return TransactionGraph.from_edges(x, [(0, 1), (1, 2)], np.array([[10.0], [20.0]]))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
