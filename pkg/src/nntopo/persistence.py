"""Vietoris-Rips filtrations and persistence barcodes.

Intervals are half-open, ``[birth, death)``, so the number of bars of
dimension k that contain a grid scale equals beta_k of the snapshot complex
at that scale.  Zero-length bars are kept in the raw barcode and hidden by
:meth:`Barcode.nonzero`.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .simplicial import ComplexValidationError, Simplex, SimplicialComplex, faces
from scipy.sparse.csgraph import dijkstra

from .vr import (
    GeodesicDistances,
    ParameterError,
    as_cloud,
    enumerate_cliques,
    knn_graph,
    threshold_bitsets,
)

INF = math.inf


@dataclass(frozen=True)
class FilteredComplex:
    """Simplices with birth times, in a total order refining the filtration.

    ``order`` is sorted by (birth, dimension, vertices) unless a caller
    supplies another valid order.  ``dmax`` is the highest dimension whose
    homology the filtration is built to resolve; simplices go one higher.
    """

    simplices: tuple[Simplex, ...]
    births: tuple[float, ...]
    scales: tuple[float, ...]
    dmax: int

    def __len__(self) -> int:
        return len(self.simplices)

    def snapshot(self, eps: float) -> SimplicialComplex:
        return SimplicialComplex(s for s, b in zip(self.simplices, self.births) if b <= eps)

    def validate(self) -> None:
        position = {s: i for i, s in enumerate(self.simplices)}
        if len(position) != len(self.simplices):
            raise ComplexValidationError("filtration repeats a simplex")
        for i, s in enumerate(self.simplices):
            for f in faces(s):
                j = position.get(f)
                if j is None:
                    raise ComplexValidationError(f"face {f} of {s} missing from filtration")
                if j > i or self.births[j] > self.births[i]:
                    raise ComplexValidationError(f"face {f} enters after {s}")

    def reordered(self, key) -> "FilteredComplex":
        """Same filtration with ties broken by ``key`` (birth and dimension still lead)."""
        items = sorted(zip(self.simplices, self.births), key=lambda sb: (sb[1], len(sb[0]), key(sb[0])))
        return FilteredComplex(tuple(s for s, _ in items), tuple(b for _, b in items), self.scales, self.dmax)


def half_integer_scales(eps_max: float) -> list[float]:
    """0, 0.5, 1.0, ... up to eps_max: the only scales where hop-metric VR changes."""
    return [j / 2 for j in range(int(math.floor(2 * eps_max + 1e-9)) + 1)]


def build_filtration(dist: GeodesicDistances, scales: Sequence[float], dmax: int = 2) -> FilteredComplex:
    """VR filtration over a strictly increasing scale grid.

    A simplex is born at the first grid scale eps with every pairwise
    distance <= 2 eps; simplices never born on the grid are omitted.
    """
    scales = [float(e) for e in scales]
    if not scales:
        raise ParameterError("empty scale list")
    if any(b <= a for a, b in zip(scales, scales[1:])) or scales[0] < 0:
        raise ParameterError("scales must be non-negative and strictly increasing")
    if dmax < 0:
        raise ParameterError("dmax must be non-negative")
    m = dist.matrix
    grid = np.asarray(scales)
    adj = threshold_bitsets(dist, 2 * scales[-1])
    items = []
    for s in enumerate_cliques(adj, dmax + 2):
        if len(s) == 1:
            diam = 0.0
        else:
            idx = np.asarray(s)
            diam = float(m[np.ix_(idx, idx)].max())
        j = int(np.searchsorted(2 * grid, diam - 1e-12, side="left"))
        items.append((scales[j], len(s), s))
    items.sort()
    return FilteredComplex(
        tuple(s for _, _, s in items), tuple(b for b, _, _ in items), tuple(scales), dmax)


@dataclass(frozen=True)
class Barcode:
    """Multiset of (dimension, birth, death) intervals; death may be inf."""

    intervals: tuple[tuple[int, float, float], ...]

    def __post_init__(self):
        for k, b, d in self.intervals:
            if k < 0 or d < b:
                raise ValueError(f"bad interval {(k, b, d)}")

    def sorted(self) -> "Barcode":
        return Barcode(tuple(sorted(self.intervals)))

    def nonzero(self) -> "Barcode":
        return Barcode(tuple(iv for iv in self.intervals if iv[2] > iv[1]))

    def dimension(self, k: int) -> list[tuple[float, float]]:
        return [(b, d) for kk, b, d in self.intervals if kk == k]

    def infinite(self, k: int) -> int:
        return sum(1 for kk, _, d in self.intervals if kk == k and d == INF)

    def betti_at(self, eps: float, dmax: int) -> tuple[int, ...]:
        return tuple(persistent_betti(self, k, eps) for k in range(dmax + 1))

    def to_csv(self, include_zero: bool = False) -> str:
        bars = self if include_zero else self.nonzero()
        buf = io.StringIO()
        buf.write("dim,birth,death\n")
        for k, b, d in sorted(bars.intervals):
            buf.write(f"{k},{b!r},{'inf' if d == INF else repr(d)}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Barcode":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls(tuple((int(r["dim"]), float(r["birth"]), float(r["death"])) for r in rows))


def reduce(filtration: FilteredComplex, clearing: bool = False) -> Barcode:
    """Persistence barcode by column reduction of the filtration boundary matrix.

    Columns are reduced left to right with XOR until every nonzero column
    has a distinct lowest row.  A pivot (i, j) gives the bar
    [birth(i), birth(j)) in dimension dim(i); unpaired simplices give
    infinite bars.  ``clearing`` reduces high dimensions first and skips
    columns already known to vanish; the barcode is identical.
    """
    filtration.validate()
    simplices = filtration.simplices
    births = filtration.births
    index = {s: i for i, s in enumerate(simplices)}
    by_dim: dict[int, list[int]] = {}
    for i, s in enumerate(simplices):
        by_dim.setdefault(len(s) - 1, []).append(i)

    pair_of: dict[int, int] = {}  # low row -> column
    dims = sorted(by_dim, reverse=clearing)
    if not clearing:
        # Plain algorithm: one sweep over all columns in filtration order.
        dims = [None]
    cleared: set[int] = set()
    for dim in dims:
        cols = range(len(simplices)) if dim is None else by_dim[dim]
        reduced: dict[int, set[int]] = {}
        for j in cols:
            s = simplices[j]
            if len(s) == 1 or j in cleared:
                continue
            col = {index[f] for f in faces(s)}
            while col:
                low = max(col)
                other = reduced.get(low)
                if other is None:
                    reduced[low] = col
                    pair_of[low] = j
                    break
                col ^= other
        if clearing:
            cleared |= set(reduced)

    negative = set(pair_of.values())
    intervals = []
    for i, j in pair_of.items():
        k = len(simplices[i]) - 1
        if k <= filtration.dmax:
            intervals.append((k, births[i], births[j]))
    for i, s in enumerate(simplices):
        k = len(s) - 1
        if i in pair_of or i in negative or k > filtration.dmax:
            continue
        intervals.append((k, births[i], INF))
    return Barcode(tuple(sorted(intervals)))


def persistent_betti(barcode: Barcode, k: int, eps: float, until: float | None = None) -> int:
    """Number of dimension-k bars alive at ``eps`` (and still alive past ``until``).

    With ``until`` this is the persistent Betti number between grid scales
    eps_j = eps and eps_{j+p} = until: bars born by eps that die after until.
    """
    if until is None:
        until = eps
    return sum(1 for kk, b, d in barcode.intervals if kk == k and b <= eps and d > until)


def persistent_betti_span(barcode: Barcode, k: int, scales: Sequence[float], j: int, p: int) -> int:
    """beta_k^{j,p} on a scale grid."""
    return persistent_betti(barcode, k, scales[j], scales[j + p])


def barcode_from_points(points, k: int, eps_max: float, dmax: int = 2, clearing: bool = True) -> Barcode:
    """Hop-metric barcode of a cloud over the half-integer grid up to eps_max."""
    x = as_cloud(points)
    scales = half_integer_scales(eps_max)
    if x.shape[0] == 1:
        return Barcode(((0, scales[0], INF),))
    graph = knn_graph(x, min(k, x.shape[0] - 1))
    hops = int(round(2 * scales[-1]))
    dist = _hop_distances(graph, hops)
    return reduce(build_filtration(dist, scales, dmax), clearing=clearing)


def _hop_distances(graph, max_hops: int) -> GeodesicDistances:
    """Hop counts truncated at max_hops (farther pairs become inf)."""
    d = dijkstra(graph.adjacency, directed=False, unweighted=True, limit=max_hops)
    return GeodesicDistances(d)


def barcode_multiset(barcode: Barcode) -> list[tuple[int, float, float]]:
    return sorted(barcode.intervals)


def merge(barcodes: Iterable[Barcode]) -> Barcode:
    out: list[tuple[int, float, float]] = []
    for b in barcodes:
        out.extend(b.intervals)
    return Barcode(tuple(sorted(out)))
