"""Nearest-neighbor graphs, hop-count geodesics and Vietoris-Rips complexes.

Graph adjacency is kept as one Python int per vertex (bit ``j`` set when
``j`` is a neighbor).  Big-int AND/OR/XOR run in C, which makes clique
expansion and domination tests cheap at the sizes used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .simplicial import (
    BettiVector,
    SimplicialComplex,
    betti_from_ranks,
    rank_columns,
)


class ParameterError(ValueError):
    pass


def as_cloud(points) -> np.ndarray:
    """Validate a point cloud: an n x d array of finite floats, n >= 1."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ParameterError(f"expected an n x d point array, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ParameterError("point cloud has non-finite coordinates")
    return x


@dataclass(frozen=True)
class NeighborGraph:
    """Undirected graph on ``n`` vertices stored as a symmetric CSR matrix."""

    n: int
    k: int
    adjacency: sparse.csr_matrix

    def edges(self) -> list[tuple[int, int]]:
        coo = sparse.triu(self.adjacency, k=1).tocoo()
        return sorted(zip(coo.row.tolist(), coo.col.tolist()))

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def bitsets(self) -> list[int]:
        return _rows_to_bitsets(self.adjacency)

    def components(self) -> int:
        return csgraph.connected_components(self.adjacency, directed=False)[0]


@dataclass(frozen=True)
class GeodesicDistances:
    """Pairwise distance matrix; ``inf`` marks unreachable pairs."""

    matrix: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def max_finite(self) -> float:
        finite = self.matrix[np.isfinite(self.matrix)]
        return float(finite.max()) if finite.size else 0.0

    def to_csv(self) -> str:
        rows = []
        for row in self.matrix:
            rows.append(",".join("inf" if not np.isfinite(v) else f"{v:g}" for v in row))
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class ScaleParams:
    k: int
    eps: float

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError("k must be >= 1")
        if self.eps < 0:
            raise ParameterError("eps must be non-negative")

    @property
    def hops(self) -> int:
        return hop_threshold(self.eps)


def hop_threshold(eps: float) -> int:
    """Largest integer hop count t with t <= 2 * eps."""
    # Guard against 2*eps landing a hair below an integer.
    return int(math.floor(2 * eps + 1e-9))


def knn_indices(points, k: int, chunk: int = 256) -> np.ndarray:
    """Indices of the k nearest Euclidean neighbors of every point.

    Exact brute force; ties in distance go to the lower vertex index.
    """
    x = as_cloud(points)
    n = x.shape[0]
    if not 1 <= k < n:
        raise ParameterError(f"need 1 <= k < n, got k={k}, n={n}")
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        diff = x[start:stop, None, :] - x[None, :, :]
        d = np.einsum("ijk,ijk->ij", diff, diff)
        rows = np.arange(stop - start)
        d[rows, rows + start] = np.inf
        kth = np.partition(d, k - 1, axis=1)[:, k - 1:k]
        less = d < kth
        eq = d == kth
        need = k - less.sum(axis=1, keepdims=True)
        sel = less | (eq & (np.cumsum(eq, axis=1) <= need))
        idx = np.nonzero(sel)[1].reshape(stop - start, k)
        # Order each row by (distance, index).
        dsel = np.take_along_axis(d, idx, axis=1)
        order = np.lexsort((idx, dsel), axis=1)
        out[start:stop] = np.take_along_axis(idx, order, axis=1)
    return out


def knn_graph(points, k: int) -> NeighborGraph:
    """Union-symmetrized k-nearest-neighbor graph (no self loops)."""
    return graph_from_neighbors(knn_indices(points, k), k)


def graph_from_neighbors(nbrs: np.ndarray, k: int) -> NeighborGraph:
    """k-NN graph from a neighbor ranking with at least k columns.

    Rows of :func:`knn_indices` are sorted by (distance, index), so the
    ranking computed for the largest k serves every smaller k.
    """
    if not 1 <= k <= nbrs.shape[1]:
        raise ParameterError(f"ranking has {nbrs.shape[1]} columns, k={k}")
    nbrs = nbrs[:, :k]
    n = nbrs.shape[0]
    rows = np.repeat(np.arange(n), k)
    cols = nbrs.ravel()
    a = sparse.coo_matrix((np.ones(rows.size, dtype=bool), (rows, cols)), shape=(n, n)).tocsr()
    a = (a + a.T).astype(bool).tocsr()
    a.sort_indices()
    return NeighborGraph(n, k, a)


def graph_from_edges(n: int, edges: Sequence[tuple[int, int]], k: int = 0) -> NeighborGraph:
    """Build a graph directly from an edge list (testing and debugging)."""
    if edges:
        r, c = np.array(edges, dtype=np.int64).T
    else:
        r = c = np.zeros(0, dtype=np.int64)
    a = sparse.coo_matrix((np.ones(r.size, dtype=bool), (r, c)), shape=(n, n)).tocsr()
    a = (a + a.T).astype(bool).tocsr()
    a.setdiag(False)
    a.eliminate_zeros()
    a.sort_indices()
    return NeighborGraph(n, k, a)


def geodesic_distances(graph: NeighborGraph) -> GeodesicDistances:
    """All-pairs hop counts (breadth-first search from every vertex)."""
    d = csgraph.shortest_path(graph.adjacency, directed=False, unweighted=True)
    return GeodesicDistances(d)


def euclidean_distances(points) -> GeodesicDistances:
    """Ambient Euclidean metric, for debugging and small illustrations."""
    x = as_cloud(points)
    diff = x[:, None, :] - x[None, :, :]
    return GeodesicDistances(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)))


# ---------------------------------------------------------------------------
# bitset helpers


def _rows_to_bitsets(a: sparse.spmatrix) -> list[int]:
    a = sparse.csr_matrix(a, dtype=bool)
    n = a.shape[1]
    nbytes = (n + 7) // 8
    out = []
    for i in range(a.shape[0]):
        idx = a.indices[a.indptr[i]:a.indptr[i + 1]]
        row = np.zeros(nbytes * 8, dtype=bool)
        row[idx] = True
        out.append(int.from_bytes(np.packbits(row, bitorder="little").tobytes(), "little"))
    return out


def _bits(x: int) -> Iterator[int]:
    while x:
        low = x & -x
        yield low.bit_length() - 1
        x ^= low


def threshold_bitsets(dist: GeodesicDistances, threshold: float) -> list[int]:
    """Adjacency of {(i, j): i != j, d(i, j) <= threshold} as bitsets."""
    m = dist.matrix <= threshold
    np.fill_diagonal(m, False)
    return _rows_to_bitsets(sparse.csr_matrix(m))


def hop_bitsets(graph: NeighborGraph, hops: int) -> list[int]:
    """Adjacency of pairs joined by a path of at most ``hops`` edges.

    Avoids materializing the full n x n distance matrix.
    """
    n = graph.n
    if hops <= 0:
        return [0] * n
    a = graph.adjacency.astype(np.int32)
    reach = a.copy()
    step = a + sparse.identity(n, dtype=np.int32, format="csr")
    for _ in range(hops - 1):
        reach = (reach @ step).astype(bool).astype(np.int32)
    reach = reach.tolil()
    reach.setdiag(0)
    reach = reach.tocsr()
    reach.eliminate_zeros()
    return _rows_to_bitsets(reach)


def enumerate_cliques(adj: Sequence[int], max_size: int) -> Iterator[tuple[int, ...]]:
    """All cliques with at most ``max_size`` vertices, each as a sorted tuple.

    Cliques are grown by adding vertices in index order, so nothing above
    ``max_size`` vertices is ever enumerated.
    """
    def grow(clique: tuple[int, ...], cand: int):
        yield clique
        if len(clique) == max_size:
            return
        for v in _bits(cand):
            # Only higher-indexed candidates keep tuples sorted.
            yield from grow(clique + (v,), cand & adj[v] & ~((1 << (v + 1)) - 1))

    if max_size < 1:
        return
    for v in range(len(adj)):
        yield from grow((v,), adj[v] & ~((1 << (v + 1)) - 1))


def clique_complex(adj: Sequence[int], dmax: int) -> SimplicialComplex:
    """Flag complex of a graph, truncated at dimension dmax + 1."""
    return SimplicialComplex(sorted(enumerate_cliques(adj, dmax + 2), key=lambda s: (len(s), s)))


def vietoris_rips(dist: GeodesicDistances, eps: float, dmax: int = 2) -> SimplicialComplex:
    """Vietoris-Rips complex at scale eps: cliques of {d(i, j) <= 2 eps}.

    Simplices are enumerated up to dimension dmax + 1 so that the rank of
    the (dmax+1)-th boundary map is available for Betti numbers up to dmax.
    Unreachable pairs (infinite distance) are never joined.
    """
    if eps < 0 or dmax < 0:
        raise ParameterError("eps and dmax must be non-negative")
    return clique_complex(threshold_bitsets(dist, 2 * eps), dmax)


def strong_collapse(adj: Sequence[int]) -> list[int]:
    """Vertices that survive iterated removal of dominated vertices.

    Vertex v is dominated by a neighbor u when the closed neighborhood of v
    is contained in that of u; deleting v leaves the homotopy type of the
    flag complex unchanged.  Returns surviving vertex indices in order.
    """
    adj = list(adj)
    alive = (1 << len(adj)) - 1
    changed = True
    while changed:
        changed = False
        for v in _bits(alive):
            nv = adj[v] | (1 << v)
            for u in _bits(adj[v]):
                if nv & ~(adj[u] | (1 << u)) == 0:
                    alive &= ~(1 << v)
                    clear = ~(1 << v)
                    for w in _bits(adj[v]):
                        adj[w] &= clear
                    adj[v] = 0
                    changed = True
                    break
    return list(_bits(alive))


def induced(adj: Sequence[int], keep: Sequence[int]) -> list[int]:
    """Adjacency bitsets of the subgraph on ``keep``, relabeled 0..len-1."""
    pos = {v: i for i, v in enumerate(keep)}
    out = []
    for v in keep:
        row = 0
        for w in _bits(adj[v]):
            j = pos.get(w)
            if j is not None:
                row |= 1 << j
        out.append(row)
    return out


def edge_collapse(adj: Sequence[int]) -> list[int]:
    """Remove dominated edges until none is left; returns new adjacency.

    Edge uv is dominated by a common neighbor w when every common neighbor
    of u and v other than w is adjacent to w.  The flag complex of the
    graph without uv is then a strong deformation retract of the original.
    """
    adj = list(adj)
    changed = True
    while changed:
        changed = False
        for u in range(len(adj)):
            for v in _bits(adj[u] & ~((1 << (u + 1)) - 1)):
                common = adj[u] & adj[v]
                for w in _bits(common):
                    if common & ~adj[w] & ~(1 << w) == 0:
                        adj[u] &= ~(1 << v)
                        adj[v] &= ~(1 << u)
                        changed = True
                        break
    return adj


class BudgetExceeded(RuntimeError):
    """The complex is too large to reduce within the configured budget."""


def collapse_graph(adj: Sequence[int], max_rounds: int = 4, max_edges: int | None = None) -> list[int]:
    """Alternate vertex and edge collapses (relabeled result).

    Stops at a fixed point or after ``max_rounds`` edge passes; any prefix
    of collapses is exact, so stopping early only costs speed later.
    """
    adj = induced(adj, strong_collapse(adj))
    for _ in range(max_rounds):
        before = sum(a.bit_count() for a in adj)
        if max_edges is not None and before // 2 > max_edges:
            raise BudgetExceeded(f"{before // 2} edges after vertex collapse")
        adj = edge_collapse(adj)
        adj = induced(adj, strong_collapse(adj))
        if sum(a.bit_count() for a in adj) == before:
            break
    return adj


def clique_estimate(adj: Sequence[int], dmax: int) -> int:
    """Upper bound on the number of simplices up to dimension dmax + 1."""
    total = len(adj)
    if dmax < 0:
        return total
    for u in range(len(adj)):
        for v in _bits(adj[u] & ~((1 << (u + 1)) - 1)):
            c = (adj[u] & adj[v]).bit_count()
            total += 1
            if dmax >= 1:
                total += c / 3
            if dmax >= 2:
                total += c * (c - 1) / 12
    return int(total)


def flag_betti(adj: Sequence[int], dmax: int = 2, collapse: bool = True,
               budget: int | None = None) -> BettiVector:
    """Betti numbers of the flag complex of a graph, beta_0..beta_dmax.

    With ``collapse`` the graph is first reduced by vertex and edge
    collapses, which preserve every Betti number and usually shrink VR
    complexes of sampled manifolds by orders of magnitude.  ``budget``
    caps the number of simplices that may be enumerated (raising
    :class:`BudgetExceeded`); it also caps the edges handed to the
    comparatively slow edge collapse at budget / 20.
    """
    if collapse:
        adj = collapse_graph(adj, max_edges=None if budget is None else budget // 20)
    if budget is not None and clique_estimate(adj, dmax) > budget:
        raise BudgetExceeded(f"estimated complex size above {budget}")
    levels: list[list[tuple[int, ...]]] = [[] for _ in range(dmax + 2)]
    for c in enumerate_cliques(adj, dmax + 2):
        levels[len(c) - 1].append(c)
    index = []
    for level in levels:
        level.sort()
        index.append({s: i for i, s in enumerate(level)})
    counts = [len(level) for level in levels]
    ranks = [0] * (dmax + 2)
    cleared: set[int] = set()
    # Top dimension first: pivots of the higher map mark columns of the
    # lower map that must reduce to zero.
    for k in range(dmax + 1, 0, -1):
        rows = index[k - 1]
        pivots: dict[int, set[int]] = {}
        for j, s in enumerate(levels[k]):
            if j in cleared:
                continue
            col = {rows[s[:i] + s[i + 1:]] for i in range(len(s))}
            while col:
                low = max(col)
                other = pivots.get(low)
                if other is None:
                    pivots[low] = col
                    break
                col ^= other
        ranks[k] = len(pivots)
        cleared = set(pivots)
    return betti_from_ranks(counts, ranks, dmax)


def vr_betti(points, k: int, eps: float, dmax: int = 2, collapse: bool = True,
             budget: int | None = None) -> BettiVector:
    """Betti numbers of VR_{k,eps} of a point cloud in the hop metric of its k-NN graph."""
    x = as_cloud(points)
    if x.shape[0] == 1:
        return BettiVector((1,) + (0,) * dmax)
    graph = knn_graph(x, min(k, x.shape[0] - 1))
    return flag_betti(hop_bitsets(graph, hop_threshold(eps)), dmax, collapse=collapse, budget=budget)
