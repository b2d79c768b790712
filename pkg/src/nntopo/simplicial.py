"""Abstract simplicial complexes and homology with F2 coefficients.

Simplices are canonical tuples of strictly increasing vertex indices.  All
matrix bases are ordered lexicographically on those tuples, so boundary
matrices are reproducible across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from typing import Iterable, Sequence

import numpy as np

Simplex = tuple[int, ...]

_WORD = 64


class ComplexValidationError(ValueError):
    """Raised when a complex is not face-closed or holds duplicates."""


def simplex(vertices: Iterable[int]) -> Simplex:
    """Return the canonical form of a simplex (sorted, distinct, non-negative)."""
    verts = sorted(int(v) for v in vertices)
    if not verts:
        raise ValueError("a simplex needs at least one vertex")
    if verts[0] < 0:
        raise ValueError(f"negative vertex index in {verts}")
    for a, b in zip(verts, verts[1:]):
        if a == b:
            raise ValueError(f"repeated vertex {a} in simplex")
    return tuple(verts)


def dimension(s: Simplex) -> int:
    return len(s) - 1


def faces(s: Simplex) -> list[Simplex]:
    """Codimension-one faces, in the order v_0-hat, v_1-hat, ..."""
    if len(s) == 1:
        return []
    return [s[:j] + s[j + 1:] for j in range(len(s))]


class SimplicialComplex:
    """A finite collection of simplices grouped by dimension.

    The constructor keeps whatever it is given (after canonicalizing each
    simplex) so that :func:`validate_complex` can report defects; use
    :meth:`closure` to build a face-closed complex from generators.
    """

    def __init__(self, simplices: Iterable[Iterable[int]] = ()):
        raw = [simplex(s) for s in simplices]
        self._raw: tuple[Simplex, ...] = tuple(raw)
        by_dim: dict[int, set[Simplex]] = {}
        for s in raw:
            by_dim.setdefault(len(s) - 1, set()).add(s)
        self._by_dim = {k: sorted(v) for k, v in by_dim.items()}
        self._index: dict[int, dict[Simplex, int]] = {}

    @classmethod
    def closure(cls, generators: Iterable[Iterable[int]]) -> "SimplicialComplex":
        """Smallest complex containing every generator and all of its faces."""
        out: set[Simplex] = set()
        for g in generators:
            g = simplex(g)
            for r in range(1, len(g) + 1):
                out.update(combinations(g, r))
        return cls(sorted(out, key=lambda s: (len(s), s)))

    @property
    def dim(self) -> int:
        """Top dimension, or -1 for the empty complex."""
        return max(self._by_dim, default=-1)

    def simplices(self, k: int) -> list[Simplex]:
        """The k-simplices in lexicographic order."""
        return self._by_dim.get(k, [])

    def count(self, k: int) -> int:
        return len(self._by_dim.get(k, ()))

    def counts(self) -> list[int]:
        return [self.count(k) for k in range(self.dim + 1)]

    def index(self, k: int) -> dict[Simplex, int]:
        if k not in self._index:
            self._index[k] = {s: i for i, s in enumerate(self.simplices(k))}
        return self._index[k]

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_dim.values())

    def __iter__(self):
        for k in sorted(self._by_dim):
            yield from self._by_dim[k]

    def __contains__(self, s) -> bool:
        s = tuple(s)
        return s in self.index(len(s) - 1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SimplicialComplex):
            return NotImplemented
        return self._by_dim == other._by_dim

    def issubset(self, other: "SimplicialComplex") -> bool:
        return all(s in other for s in self)

    @property
    def raw(self) -> tuple[Simplex, ...]:
        return self._raw

    def dump(self) -> str:
        """Debug text: one simplex per line, space-separated vertices."""
        return "".join(" ".join(map(str, s)) + "\n" for s in self)


def size_bound(n_vertices: int, d: int) -> int:
    """Largest possible number of simplices of dimension <= d on n vertices."""
    return sum(comb(n_vertices, i + 1) for i in range(d + 1))


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    offending: Simplex | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def validate_complex(complex: SimplicialComplex) -> ValidationReport:
    """Check face closure and absence of duplicates."""
    seen: set[Simplex] = set()
    for s in complex.raw:
        if s in seen:
            return ValidationReport(False, s, "duplicate simplex")
        seen.add(s)
    for s in complex.raw:
        for f in faces(s):
            if f not in seen:
                return ValidationReport(False, s, f"missing face {f}")
    return ValidationReport(True)


def _require_valid(complex: SimplicialComplex) -> None:
    report = validate_complex(complex)
    if not report:
        raise ComplexValidationError(
            f"invalid complex at {report.offending}: {report.reason}")


# ---------------------------------------------------------------------------
# F2 matrices


class F2Matrix:
    """Dense matrix over the two-element field, rows bit-packed in uint64 words.

    Bit ``c % 64`` of word ``c // 64`` in row ``r`` holds entry (r, c).
    """

    __slots__ = ("rows", "cols", "words")

    def __init__(self, rows: int, cols: int, words: np.ndarray | None = None):
        if rows < 0 or cols < 0:
            raise ValueError("matrix shape must be non-negative")
        self.rows = rows
        self.cols = cols
        nw = (cols + _WORD - 1) // _WORD
        if words is None:
            words = np.zeros((rows, nw), dtype=np.uint64)
        elif words.shape != (rows, nw) or words.dtype != np.uint64:
            raise ValueError("word array does not match shape")
        self.words = words

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "F2Matrix":
        return cls(rows, cols)

    @classmethod
    def identity(cls, n: int) -> "F2Matrix":
        m = cls(n, n)
        for i in range(n):
            m[i, i] = 1
        return m

    @classmethod
    def from_dense(cls, a) -> "F2Matrix":
        a = np.asarray(a, dtype=np.uint8) & 1
        if a.ndim != 2:
            raise ValueError("expected a 2-D array")
        rows, cols = a.shape
        nw = (cols + _WORD - 1) // _WORD
        padded = np.zeros((rows, nw * _WORD), dtype=np.uint8)
        padded[:, :cols] = a
        packed = np.packbits(padded, axis=1, bitorder="little")
        words = packed.view(np.uint64).reshape(rows, nw).copy() if rows else np.zeros((0, nw), np.uint64)
        return cls(rows, cols, words)

    def to_dense(self) -> np.ndarray:
        if self.rows == 0 or self.cols == 0:
            return np.zeros((self.rows, self.cols), dtype=np.uint8)
        bits = np.unpackbits(self.words.view(np.uint8), axis=1, bitorder="little")
        return bits[:, : self.cols].copy()

    def copy(self) -> "F2Matrix":
        return F2Matrix(self.rows, self.cols, self.words.copy())

    def __getitem__(self, rc: tuple[int, int]) -> int:
        r, c = rc
        return int((self.words[r, c // _WORD] >> np.uint64(c % _WORD)) & np.uint64(1))

    def __setitem__(self, rc: tuple[int, int], value: int) -> None:
        r, c = rc
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            raise IndexError((r, c))
        bit = np.uint64(1) << np.uint64(c % _WORD)
        if value & 1:
            self.words[r, c // _WORD] |= bit
        else:
            self.words[r, c // _WORD] &= ~bit

    def __add__(self, other: "F2Matrix") -> "F2Matrix":
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise ValueError("shape mismatch")
        return F2Matrix(self.rows, self.cols, self.words ^ other.words)

    def __matmul__(self, other: "F2Matrix") -> "F2Matrix":
        if self.cols != other.rows:
            raise ValueError(f"cannot multiply {self.shape} by {other.shape}")
        out = F2Matrix(self.rows, other.cols)
        if self.rows == 0 or other.cols == 0:
            return out
        dense = self.to_dense()
        for r in range(self.rows):
            sel = np.flatnonzero(dense[r])
            if sel.size:
                out.words[r] = np.bitwise_xor.reduce(other.words[sel], axis=0)
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, F2Matrix):
            return NotImplemented
        return (self.rows, self.cols) == (other.rows, other.cols) and bool(
            np.array_equal(self.words, other.words))

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def is_zero(self) -> bool:
        return not self.words.any()

    def __repr__(self) -> str:
        return f"F2Matrix({self.rows}x{self.cols})"


def boundary_matrix(complex: SimplicialComplex, k: int) -> F2Matrix:
    """Matrix of the k-th boundary map, shape m_{k-1} x m_k.

    Rows index (k-1)-simplices and columns index k-simplices, both in
    lexicographic order.  The zeroth boundary map is the 0 x m_0 zero matrix.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    _require_valid(complex)
    cols = complex.simplices(k)
    if k == 0:
        return F2Matrix(0, len(cols))
    row_index = complex.index(k - 1)
    m = F2Matrix(len(row_index), len(cols))
    for j, s in enumerate(cols):
        for f in faces(s):
            m[row_index[f], j] = 1
    return m


def rank_f2(m: F2Matrix) -> int:
    """Rank over F2 by Gaussian elimination.

    Works on a private copy of the word array; the argument is not mutated.
    """
    work = m.words.copy()
    n_rows = m.rows
    rank = 0
    one = np.uint64(1)
    for c in range(m.cols):
        if rank == n_rows:
            break
        w, b = divmod(c, _WORD)
        col_bits = (work[rank:, w] >> np.uint64(b)) & one
        hits = np.flatnonzero(col_bits)
        if hits.size == 0:
            continue
        p = rank + hits[0]
        if p != rank:
            work[[rank, p]] = work[[p, rank]]
        below = rank + 1 + np.flatnonzero((work[rank + 1:, w] >> np.uint64(b)) & one)
        if below.size:
            work[below] ^= work[rank]
        rank += 1
    return rank


def rank_columns(columns: Iterable[Iterable[int]]) -> int:
    """Rank over F2 of a matrix given as columns of nonzero row indices.

    Standard low-pivot column reduction on sets, so storage follows the
    number of nonzeros; suited to boundary matrices far too large for the
    dense representation.
    """
    pivots: dict[int, set[int]] = {}
    rank = 0
    for col in columns:
        col = set(col)
        while col:
            low = max(col)
            other = pivots.get(low)
            if other is None:
                pivots[low] = col
                rank += 1
                break
            col ^= other
    return rank


def boundary_columns(complex: SimplicialComplex, k: int) -> list[list[int]]:
    """The k-th boundary map as lists of row indices, one per k-simplex."""
    if k == 0:
        return [[] for _ in range(complex.count(0))]
    row_index = complex.index(k - 1)
    return [[row_index[f] for f in faces(s)] for s in complex.simplices(k)]


@dataclass(frozen=True)
class BettiVector:
    betti: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "betti", tuple(int(b) for b in self.betti))
        if any(b < 0 for b in self.betti):
            raise ValueError(f"negative Betti number in {self.betti}")

    def __iter__(self):
        return iter(self.betti)

    def __len__(self) -> int:
        return len(self.betti)

    def __getitem__(self, k):
        return self.betti[k]

    def __eq__(self, other) -> bool:
        if isinstance(other, BettiVector):
            return self.betti == other.betti
        if isinstance(other, (tuple, list)):
            return self.betti == tuple(other)
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self.betti)

    def __repr__(self) -> str:
        return f"BettiVector{self.betti}"


def betti_from_ranks(counts: Sequence[int], ranks: Sequence[int], dmax: int) -> BettiVector:
    """beta_k = (m_k - rank d_k) - rank d_{k+1}, with ranks[k] = rank d_k."""
    out = []
    for k in range(dmax + 1):
        m_k = counts[k] if k < len(counts) else 0
        r_k = ranks[k] if k < len(ranks) else 0
        r_next = ranks[k + 1] if k + 1 < len(ranks) else 0
        out.append(m_k - r_k - r_next)
    return BettiVector(tuple(out))


def betti_numbers(complex: SimplicialComplex, dmax: int = 2, method: str = "dense") -> BettiVector:
    """Betti numbers beta_0..beta_dmax over F2.

    ``method="dense"`` uses bit-packed :class:`F2Matrix` elimination;
    ``method="sparse"`` reduces sparse index columns and scales to much larger
    complexes.  Both give identical results.
    """
    _require_valid(complex)
    counts = [complex.count(k) for k in range(dmax + 2)]
    ranks = [0]
    for k in range(1, dmax + 2):
        if counts[k] == 0:
            ranks.append(0)
        elif method == "dense":
            ranks.append(rank_f2(boundary_matrix(complex, k)))
        elif method == "sparse":
            ranks.append(rank_columns(boundary_columns(complex, k)))
        else:
            raise ValueError(f"unknown method {method!r}")
    return betti_from_ranks(counts, ranks, dmax)


def euler_characteristic(complex: SimplicialComplex) -> int:
    return sum((-1) ** k * m for k, m in enumerate(complex.counts()))
