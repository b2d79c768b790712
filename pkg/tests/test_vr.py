import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nntopo.simplicial import SimplicialComplex, betti_numbers, validate_complex
from nntopo.vr import (
    BudgetExceeded,
    GeodesicDistances,
    ParameterError,
    ScaleParams,
    clique_complex,
    collapse_graph,
    euclidean_distances,
    flag_betti,
    geodesic_distances,
    graph_from_edges,
    hop_bitsets,
    hop_threshold,
    knn_graph,
    knn_indices,
    threshold_bitsets,
    vietoris_rips,
    vr_betti,
)
from oracles import bfs_hops, brute_cliques, brute_knn_edges, components


def circle(n: int, radius: float = 1.0) -> np.ndarray:
    t = 2 * np.pi * np.arange(n) / n
    return radius * np.c_[np.cos(t), np.sin(t)]


def test_collinear_points_give_a_path():
    g = knn_graph(np.array([[0.0], [1.0], [2.0]]), 1)
    assert g.edges() == [(0, 1), (1, 2)]


def test_k_n_minus_one_is_complete():
    x = np.random.default_rng(0).normal(size=(7, 3))
    g = knn_graph(x, 6)
    assert len(g.edges()) == 21


def test_ten_point_circle_k2_is_a_cycle():
    x = circle(10)
    g = knn_graph(x, 2)
    assert set(g.edges()) == brute_knn_edges(x, 2)
    assert g.edges() == sorted([(i, (i + 1) % 10) if i < (i + 1) % 10 else ((i + 1) % 10, i) for i in range(10)])


def test_k_out_of_range():
    x = np.zeros((4, 2))
    with pytest.raises(ParameterError):
        knn_graph(x, 4)
    with pytest.raises(ParameterError):
        knn_graph(x, 0)


def test_ties_go_to_lower_index():
    # Point 0 sits at distance 1 from points 1, 2 and 3.
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    assert knn_indices(x, 2)[0].tolist() == [1, 2]


def test_invalid_clouds():
    with pytest.raises(ParameterError):
        knn_graph(np.array([[0.0, np.nan], [1.0, 1.0]]), 1)
    with pytest.raises(ParameterError):
        knn_graph(np.zeros((0, 2)), 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 25), st.integers(1, 6), st.integers(0, 10_000))
def test_knn_matches_brute_force(n, k, seed):
    k = min(k, n - 1)
    x = np.random.default_rng(seed).integers(0, 4, size=(n, 2)).astype(float)  # many ties
    assert set(knn_graph(x, k).edges()) == brute_knn_edges(x, k)


def test_geodesic_examples():
    path = geodesic_distances(graph_from_edges(3, [(0, 1), (1, 2)]))
    assert path.matrix[0, 2] == 2
    apart = geodesic_distances(graph_from_edges(2, []))
    assert math.isinf(apart.matrix[0, 1])
    cyc = geodesic_distances(graph_from_edges(10, [(i, (i + 1) % 10) for i in range(10)]))
    assert cyc.max_finite() == 5


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 20), st.lists(st.tuples(st.integers(0, 19), st.integers(0, 19)), max_size=40))
def test_geodesics_match_bfs_and_metric_axioms(n, raw):
    edges = sorted({(min(a, b), max(a, b)) for a, b in raw if a != b and a < n and b < n})
    g = graph_from_edges(n, edges)
    d = geodesic_distances(g).matrix
    adj = [set() for _ in range(n)]
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    assert np.array_equal(d, bfs_hops(adj))
    assert np.array_equal(d, d.T) and not d.diagonal().any()
    fin = np.isfinite(d)
    for i, j, k in zip(*np.nonzero(fin[:, :, None] & fin[None, :, :] & fin[:, None, :].transpose(0, 2, 1))):
        assert d[i, k] <= d[i, j] + d[j, k]


def test_distance_csv_dump():
    text = geodesic_distances(graph_from_edges(3, [(0, 1)])).to_csv()
    assert text.splitlines()[0] == "0,1,inf"


def test_vr_at_zero_is_discrete():
    g = knn_graph(circle(10), 2)
    K = vietoris_rips(geodesic_distances(g), 0.0)
    assert betti_numbers(K) == (10, 0, 0)


def test_vr_at_large_scale_is_contractible():
    g = knn_graph(circle(10), 2)
    dist = geodesic_distances(g)
    K = vietoris_rips(dist, dist.max_finite() / 2)
    assert betti_numbers(K) == (1, 0, 0)


def test_vr_cycle_graph_is_a_circle():
    dist = geodesic_distances(knn_graph(circle(10), 2))
    K = vietoris_rips(dist, 0.5, dmax=1)
    edges = set(knn_graph(circle(10), 2).edges())
    assert set(K) == brute_cliques(10, edges, 3)
    assert betti_numbers(K, dmax=1) == (1, 1)


def test_vr_truncates_at_dmax_plus_one():
    dist = geodesic_distances(graph_from_edges(6, [(i, j) for i in range(6) for j in range(i + 1, 6)]))
    assert vietoris_rips(dist, 1.0, dmax=1).dim == 2
    assert vietoris_rips(dist, 1.0, dmax=2).dim == 3


def test_hop_threshold_and_scale_params():
    assert hop_threshold(1.0) == 2 and hop_threshold(1.49) == 2 and hop_threshold(0.5) == 1
    assert ScaleParams(3, 1.5).hops == 3
    with pytest.raises(ParameterError):
        ScaleParams(0, 1.0)
    with pytest.raises(ParameterError):
        ScaleParams(2, -1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 25), st.integers(1, 5), st.integers(0, 10_000))
def test_vr_properties(n, k, seed):
    x = np.random.default_rng(seed).normal(size=(n, 2))
    g = knn_graph(x, min(k, n - 1))
    dist = geodesic_distances(g)
    previous = None
    for eps in (0.0, 0.5, 1.0, 1.5, 2.0, 3.0):
        K = vietoris_rips(dist, eps)
        assert validate_complex(K)
        if previous is not None:
            assert previous.issubset(K)
        previous = K
        threshold_edges = [(i, j) for i in range(n) for j in range(i + 1, n) if dist.matrix[i, j] <= 2 * eps]
        assert betti_numbers(K)[0] == components(n, threshold_edges)
        if math.floor(2 * eps) == math.floor(2 * (eps + 0.49)):
            assert vietoris_rips(dist, eps + 0.49) == K
        assert threshold_bitsets(dist, 2 * eps) == hop_bitsets(g, hop_threshold(eps))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 14), st.lists(st.tuples(st.integers(0, 13), st.integers(0, 13)), max_size=50))
def test_flag_betti_with_collapses_is_exact(n, raw):
    edges = sorted({(min(a, b), max(a, b)) for a, b in raw if a != b and a < n and b < n})
    adj = graph_from_edges(n, edges).bitsets()
    direct = betti_numbers(clique_complex(adj, 2))
    assert flag_betti(adj, 2, collapse=False) == direct
    assert flag_betti(adj, 2, collapse=True) == direct


def octahedron():
    # Every vertex misses only its antipode; nothing collapses.
    return graph_from_edges(6, [(i, j) for i in range(6) for j in range(i + 1, 6) if j != i + 3]).bitsets()


def test_budget():
    complete = graph_from_edges(30, [(i, j) for i in range(30) for j in range(i + 1, 30)]).bitsets()
    with pytest.raises(BudgetExceeded):
        flag_betti(complete, 2, collapse=False, budget=100)
    # A complete graph collapses to a point and stays within budget.
    assert flag_betti(complete, 2, collapse=True, budget=100) == (1, 0, 0)
    assert flag_betti(octahedron(), 2) == (1, 0, 1)
    assert collapse_graph(octahedron()) == octahedron()
    with pytest.raises(BudgetExceeded):
        flag_betti(octahedron(), 2, collapse=True, budget=20)


def test_vr_betti_of_circle_cloud():
    assert vr_betti(circle(40), 2, 0.5, dmax=1) == (1, 1)
    assert vr_betti(circle(1), 3, 1.0) == (1, 0, 0)


def test_euclidean_debug_metric():
    d = euclidean_distances(np.array([[0.0, 0.0], [3.0, 4.0]]))
    assert d.matrix[0, 1] == pytest.approx(5.0)
    assert isinstance(d, GeodesicDistances)
