import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from incopt.errors import (
    DanglingEndpointError,
    DimMismatchError,
    DuplicateEdgeError,
    NonFiniteError,
    OutOfRangeError,
    SelfLoopError,
)
from incopt.graph import (
    TransactionGraph,
    load_graph,
    neighbors,
    read_idmap,
    sample_neighbors,
    sample_rows,
    save_graph,
)


def write(tmp_path, nodes, edges):
    (tmp_path / "nodes.tsv").write_text("".join(line + "\n" for line in nodes))
    (tmp_path / "edges.tsv").write_text("".join(line + "\n" for line in edges))
    return tmp_path / "nodes.tsv", tmp_path / "edges.tsv"


@st.composite
def graphs(draw, max_nodes=12):
    n = draw(st.integers(0, max_nodes))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=30)) if pairs else []
    flip = draw(st.lists(st.booleans(), min_size=len(chosen), max_size=len(chosen)))
    edges = [(b, a) if f else (a, b) for (a, b), f in zip(chosen, flip)]
    x = np.arange(n * 2, dtype=float).reshape(n, 2)
    z = np.arange(len(edges), dtype=float).reshape(-1, 1)
    return TransactionGraph.from_edges(x, edges, z)


class TestLoad:
    def test_empty(self, tmp_path):
        g = load_graph(*write(tmp_path, [], []))
        assert g.node_count == 0 and g.edge_count == 0

    def test_path_degrees_and_shared_rows(self, tmp_path):
        g = load_graph(*write(tmp_path, ["a\tM\tR0\t1.0", "b\tC\t-\t2.0", "c\tC\tR1\t3.0"],
                              ["a\tb\t0.5", "b\tc\t0.7"]))
        np.testing.assert_array_equal(g.degrees, [1, 2, 1])
        assert neighbors(g, 0) == [(1, 0)]
        assert neighbors(g, 1) == [(0, 0), (2, 1)]
        assert neighbors(g, 2) == [(1, 1)]
        np.testing.assert_array_equal(g.edge_features[:, 0], [0.5, 0.7])
        assert g.regions == ("R0", None, "R1")
        assert g.roles == ("M", "C", "C")

    def test_dangling(self, tmp_path):
        files = write(tmp_path, ["0\tM\t-\t1", "1\tC\t-\t1", "2\tC\t-\t1"], ["0\t99\t1.0"])
        with pytest.raises(DanglingEndpointError):
            load_graph(*files)

    def test_ragged_features(self, tmp_path):
        with pytest.raises(DimMismatchError):
            load_graph(*write(tmp_path, ["0\tM\t-\t1\t2", "1\tC\t-\t1"], []))

    def test_nonfinite(self, tmp_path):
        with pytest.raises(NonFiniteError):
            load_graph(*write(tmp_path, ["0\tM\t-\tnan", "1\tC\t-\t1"], []))

    def test_duplicate_reversed_edge(self, tmp_path):
        with pytest.raises(DuplicateEdgeError):
            load_graph(*write(tmp_path, ["0\tM\t-\t1", "1\tC\t-\t1"], ["0\t1\t1", "1\t0\t2"]))

    def test_self_loop(self):
        with pytest.raises(SelfLoopError):
            TransactionGraph.from_edges(np.ones((2, 1)), [(1, 1)])

    def test_roundtrip(self, tmp_path, path_graph):
        save_graph(path_graph, tmp_path)
        g = load_graph(tmp_path / "nodes.tsv", tmp_path / "edges.tsv")
        np.testing.assert_array_equal(g.node_features, path_graph.node_features)
        np.testing.assert_array_equal(g.edge_features, path_graph.edge_features)
        assert read_idmap(tmp_path / "idmap.tsv") == {"0": 0, "1": 1, "2": 2}


class TestNeighbors:
    def test_isolated(self):
        g = TransactionGraph.from_edges(np.ones((3, 1)), [(0, 1)])
        assert neighbors(g, 2) == []

    def test_star_center_sorted(self):
        g = TransactionGraph.from_edges(np.ones((4, 1)), [(0, 3), (0, 1), (2, 0)])
        assert neighbors(g, 0) == [(1, 1), (2, 2), (3, 0)]

    def test_path_middle(self, path_graph):
        assert neighbors(path_graph, 1) == [(0, 0), (2, 1)]

    def test_out_of_range(self, path_graph):
        with pytest.raises(OutOfRangeError):
            neighbors(path_graph, 3)
        with pytest.raises(OutOfRangeError):
            sample_neighbors(path_graph, -1, 2, 0)

    @given(graphs())
    def test_symmetry(self, g):
        for i in range(g.node_count):
            for j, e in neighbors(g, i):
                assert (i, e) in neighbors(g, j)

    @given(graphs())
    def test_conservation(self, g):
        assert int(g.degrees.sum()) == 2 * g.edge_count


def star(degree):
    return TransactionGraph.from_edges(np.ones((degree + 1, 1)), [(0, j) for j in range(1, degree + 1)])


class TestSampling:
    def test_small_degree_returns_all(self, path_graph):
        assert sample_neighbors(path_graph, 1, 5, 123) == neighbors(path_graph, 1)

    def test_deterministic(self):
        g = star(100)
        a = sample_neighbors(g, 0, 10, 42)
        assert a == sample_neighbors(g, 0, 10, 42)
        assert len(a) == 10 and len({j for j, _ in a}) == 10
        assert [j for j, _ in a] == sorted(j for j, _ in a)

    def test_uniform_marginals(self):
        # each of 100 neighbors is kept with probability 10/100; hypergeometric marginal variance p(1-p)/S
        g = star(100)
        seeds = 10_000
        counts = np.zeros(101)
        for s in range(seeds):
            _, nbr, _ = sample_rows(g, np.array([0]), 10, s)
            counts[nbr] += 1
        freq = counts[1:] / seeds
        sigma = np.sqrt(0.1 * 0.9 / seeds)
        assert np.all(np.abs(freq - 0.1) < 4 * sigma)

    def test_rows_match_single(self):
        g = star(30)
        counts, nbr, eid = sample_rows(g, np.array([0, 3, 0]), 7, 9)
        single = sample_neighbors(g, 0, 7, 9)
        np.testing.assert_array_equal(counts, [7, 1, 7])
        assert list(zip(nbr[:7].tolist(), eid[:7].tolist())) == single
        assert list(zip(nbr[8:].tolist(), eid[8:].tolist())) == single

    @settings(max_examples=30)
    @given(graphs(), st.integers(1, 5), st.integers(0, 2**31))
    def test_subset_of_neighbors(self, g, fanout, seed):
        for i in range(g.node_count):
            s = sample_neighbors(g, i, fanout, seed)
            full = neighbors(g, i)
            assert set(s) <= set(full)
            assert len(s) == min(fanout, len(full))
