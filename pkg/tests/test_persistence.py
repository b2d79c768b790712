import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nntopo.persistence import (
    INF,
    Barcode,
    FilteredComplex,
    barcode_from_points,
    build_filtration,
    half_integer_scales,
    merge,
    persistent_betti,
    persistent_betti_span,
    reduce,
)
from nntopo.simplicial import ComplexValidationError, betti_numbers
from nntopo.vr import GeodesicDistances, ParameterError, geodesic_distances, graph_from_edges, knn_graph, vietoris_rips


def cycle_dist(n: int) -> GeodesicDistances:
    return geodesic_distances(graph_from_edges(n, [(i, (i + 1) % n) for i in range(n)]))


def test_scale_grid():
    assert half_integer_scales(2.0) == [0.0, 0.5, 1.0, 1.5, 2.0]
    assert half_integer_scales(0.4) == [0.0]


def test_filtration_examples():
    one = build_filtration(GeodesicDistances(1 - np.eye(3)), [0.0])
    assert one.simplices == ((0,), (1,), (2,))
    pair = build_filtration(GeodesicDistances(np.array([[0.0, 1.0], [1.0, 0.0]])), [0.0, 0.5])
    assert dict(zip(pair.simplices, pair.births))[(0, 1)] == 0.5
    with pytest.raises(ParameterError):
        build_filtration(cycle_dist(4), [])
    with pytest.raises(ParameterError):
        build_filtration(cycle_dist(4), [1.0, 0.5])


def test_circle_filtration_constant_between_half_integers():
    dist = cycle_dist(10)
    fine = [j / 10 for j in range(31)]
    f = build_filtration(dist, fine)
    for a, b in zip(fine, fine[1:]):
        if math.floor(2 * a + 1e-9) == math.floor(2 * b + 1e-9):
            assert f.snapshot(a) == f.snapshot(b)
    for eps in fine:
        assert f.snapshot(eps) == vietoris_rips(dist, eps)


def test_single_vertex_and_circle_barcodes():
    assert reduce(build_filtration(GeodesicDistances(np.zeros((1, 1))), [0.0])).intervals == ((0, 0.0, INF),)
    bars = reduce(build_filtration(cycle_dist(10), half_integer_scales(3.0))).nonzero()
    assert bars.dimension(0) == [(0.0, 0.5)] * 9 + [(0.0, INF)]
    assert (0.5, 2.0) in bars.dimension(1)
    assert bars.betti_at(1.0, 2) == (1, 1, 0)


def test_zero_length_bars_kept_raw_and_filtered():
    dist = geodesic_distances(graph_from_edges(3, [(0, 1), (1, 2), (0, 2)]))
    raw = reduce(build_filtration(dist, [0.0, 0.5]))
    assert any(b == d for _, b, d in raw.intervals)
    assert all(b < d for _, b, d in raw.nonzero().intervals)


def test_invalid_filtration_rejected():
    bad = FilteredComplex(((0, 1), (0,), (1,)), (0.0, 0.0, 0.0), (0.0,), 1)
    with pytest.raises(ComplexValidationError):
        reduce(bad)
    late_face = FilteredComplex(((0,), (1,), (0, 1)), (0.0, 1.0, 0.5), (0.0, 0.5, 1.0), 1)
    with pytest.raises(ComplexValidationError):
        reduce(late_face)


def test_barcode_invariants_and_csv():
    with pytest.raises(ValueError):
        Barcode(((0, 1.0, 0.5),))
    bc = reduce(build_filtration(cycle_dist(8), half_integer_scales(3.0)))
    assert bc.infinite(0) == 1
    text = bc.to_csv()
    assert text.splitlines()[0] == "dim,birth,death"
    assert Barcode.from_csv(text).sorted() == bc.nonzero().sorted()
    assert Barcode.from_csv(bc.to_csv(include_zero=True)).sorted() == bc.sorted()


def test_persistent_betti_span():
    bc = reduce(build_filtration(cycle_dist(10), half_integer_scales(3.0)))
    scales = half_integer_scales(3.0)
    # The loop is born at 0.5 (index 1) and dies at 2.0 (index 4).
    assert persistent_betti_span(bc, 1, scales, 1, 2) == 1
    assert persistent_betti_span(bc, 1, scales, 1, 3) == 0
    assert persistent_betti(bc, 0, 0.0) == 10


def test_constant_cloud_after_dedup():
    bc = barcode_from_points(np.zeros((1, 3)), 4, 2.0)
    assert bc.intervals == ((0, 0.0, INF),)


def test_merge():
    a = Barcode(((0, 0.0, INF),))
    b = Barcode(((1, 0.5, 1.0),))
    assert merge([a, b]).intervals == ((0, 0.0, INF), (1, 0.5, 1.0))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 25), st.integers(1, 4), st.integers(0, 10_000))
def test_snapshot_oracle_clearing_and_tie_order(n, k, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    dist = geodesic_distances(knn_graph(x, min(k, n - 1)))
    scales = half_integer_scales(2.5)
    f = build_filtration(dist, scales)
    f.validate()
    bars = reduce(f)
    for eps in scales:
        assert bars.betti_at(eps, 2) == tuple(betti_numbers(vietoris_rips(dist, eps)))
    assert reduce(f, clearing=True).sorted() == bars.sorted()
    perm = rng.permutation(n)
    shuffled = f.reordered(lambda s: tuple(perm[v] for v in s))
    assert reduce(shuffled).sorted() == bars.sorted()
