import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dlas_ftc.graph import (
    Digraph,
    GraphError,
    check_weights,
    default_weights,
    diameter,
    diameter_upper_bound,
    from_edge_list,
    is_strongly_connected,
    load_edge_list,
    random_strongly_connected,
    save_edge_list,
    to_edge_list,
)
from oracles import bfs_diameter, exact_weights, strongly_connected_bruteforce


def cycle(n):
    return Digraph.from_edges(n, [((i + 1) % n, i) for i in range(n)])


graphs = st.builds(
    random_strongly_connected,
    st.integers(2, 25),
    st.floats(0.0, 1.0),
    st.integers(0, 2**32 - 1),
)


def test_two_nodes_zero_density_is_two_cycle():
    g = random_strongly_connected(2, 0.0, 123)
    assert g.edges == frozenset({(0, 1), (1, 0)})


def test_default_style_graph_is_strongly_connected():
    g = random_strongly_connected(20, 0.2, 7)
    assert is_strongly_connected(g)
    assert strongly_connected_bruteforce(g.adjacency())


@pytest.mark.parametrize("n, density", [(1, 0.5), (0, 0.5), (5, -0.1), (5, 1.5)])
def test_generator_rejects_bad_parameters(n, density):
    with pytest.raises(GraphError):
        random_strongly_connected(n, density, 0)


def test_cycle_and_path_connectivity():
    assert is_strongly_connected(cycle(3))
    path = Digraph.from_edges(3, [(1, 0), (2, 1)])
    assert not is_strongly_connected(path)


def test_degrees_and_neighbors():
    g = Digraph.from_edges(3, [(1, 0), (2, 0), (0, 2)])
    assert g.out_degrees.tolist() == [2, 0, 1]
    assert g.in_degrees.tolist() == [1, 1, 1]
    assert g.in_neighbors[0] == (2,)
    assert g.out_neighbors[0] == (1, 2)


def test_digraph_rejects_self_edges_and_range():
    with pytest.raises(GraphError):
        Digraph.from_edges(2, [(0, 0)])
    with pytest.raises(GraphError):
        Digraph.from_edges(2, [(2, 0)])


def test_weights_two_node():
    g = Digraph.from_edges(2, [(0, 1), (1, 0)])
    assert np.array_equal(default_weights(g), np.full((2, 2), 0.5))


def test_weights_three_cycle():
    P = default_weights(cycle(3))
    for j in range(3):
        col = np.zeros(3)
        col[j] = col[(j + 1) % 3] = 0.5
        assert np.array_equal(P[:, j], col)


def test_weights_star():
    edges = [(l, 0) for l in range(1, 5)] + [(0, l) for l in range(1, 5)]
    g = Digraph.from_edges(5, edges)
    P = default_weights(g)
    assert np.allclose(P[:, 0], 1 / 5)
    assert abs(P[:, 0].sum() - 1) <= 1e-12
    assert np.allclose(P.sum(axis=0), 1.0, atol=1e-12)


def test_weights_require_strong_connectivity():
    with pytest.raises(GraphError):
        default_weights(Digraph.from_edges(3, [(1, 0), (2, 1)]))


def test_check_weights_flags_bad_support():
    g = cycle(3)
    P = default_weights(g)
    check_weights(P, g)
    bad = P.copy()
    bad[2, 0], bad[1, 0] = bad[1, 0], 0.0
    with pytest.raises(GraphError):
        check_weights(bad, g)


def test_diameter_upper_bound_values():
    assert diameter_upper_bound(20) == 19
    assert diameter_upper_bound(2) == 1
    with pytest.raises(GraphError):
        diameter_upper_bound(1)


@given(graphs)
def test_generated_graphs_strongly_connected(g):
    assert is_strongly_connected(g)
    assert strongly_connected_bruteforce(g.adjacency())


@given(graphs)
def test_weights_match_exact_rationals(g):
    P = default_weights(g)
    check_weights(P, g)
    exact = np.array([[float(v) for v in row] for row in exact_weights(g.adjacency())])
    assert np.array_equal(P, exact)
    nonzero = (P > 0).sum(axis=0)
    assert np.array_equal(nonzero, g.out_degrees + 1)


@given(graphs)
def test_diameter_within_upper_bound(g):
    d = diameter(g)
    assert d == bfs_diameter(g.adjacency())
    assert d <= diameter_upper_bound(max(2, g.node_count))


@given(st.integers(2, 8), st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
def test_weights_primitive_small(n, density, seed):
    P = default_weights(random_strongly_connected(n, density, seed))
    Q = np.eye(n)
    for _ in range(n * n):
        Q = Q @ P
        if np.all(Q > 0):
            return
    pytest.fail("no positive power up to N^2")


@given(st.booleans(), st.integers(0, 1000))
def test_connectivity_matches_bruteforce_on_random_sparse(_, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    adj = (rng.random((n, n)) < 0.3) & ~np.eye(n, dtype=bool)
    g = Digraph.from_edges(n, [(int(l), int(i)) for l, i in zip(*np.nonzero(adj))])
    assert is_strongly_connected(g) == strongly_connected_bruteforce(adj)


def test_edge_list_round_trip(tmp_path):
    g = random_strongly_connected(9, 0.4, 3)
    text = to_edge_list(g)
    assert text.splitlines()[0] == "9"
    assert all(min(map(int, line.split())) >= 1 for line in text.splitlines()[1:])
    assert from_edge_list(text) == g
    path = tmp_path / "g.txt"
    save_edge_list(g, path)
    assert load_edge_list(path) == g


def test_edge_list_rejects_garbage():
    with pytest.raises(GraphError):
        from_edge_list("3\n1 2 3\n")
    with pytest.raises(GraphError):
        from_edge_list("")


def test_fingerprint_is_stable():
    a = random_strongly_connected(10, 0.3, 5)
    b = random_strongly_connected(10, 0.3, 5)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != random_strongly_connected(10, 0.3, 6).fingerprint()
