"""Matching matrices, cycle consistency and universe factorization.

Matchings are stored row-wise as integer index arrays instead of dense
binary matrices: entry ``a`` holds the column matched to row ``a`` or
``-1`` when the row is unmatched. A universe matching has no ``-1``
entries. This keeps a 1000-node matching at O(m) memory.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError, FactorizationError, IncompleteCollectionError

UNMATCHED = -1


def _as_index_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.int64).reshape(-1)
    arr.setflags(write=False)
    return arr


def _check_injective(cols: np.ndarray, n_cols: int, what: str) -> None:
    used = cols[cols >= 0]
    if used.size and (used.max() >= n_cols or np.unique(used).size != used.size):
        raise ContractError(f"{what}: columns must be distinct and < {n_cols}")


@dataclass(frozen=True, eq=False)
class PartialPermutation:
    """Binary ``rows x cols`` matrix with at most one 1 per row and column."""

    cols: np.ndarray
    n_cols: int

    def __post_init__(self):
        object.__setattr__(self, "cols", _as_index_array(self.cols))
        if np.any(self.cols < UNMATCHED):
            raise ContractError("row entries must be a column index or -1")
        _check_injective(self.cols, self.n_cols, "PartialPermutation")

    @property
    def n_rows(self) -> int:
        return int(self.cols.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def n_matches(self) -> int:
        return int(np.count_nonzero(self.cols >= 0))

    def pairs(self) -> list[tuple[int, int]]:
        rows = np.flatnonzero(self.cols >= 0)
        return [(int(a), int(self.cols[a])) for a in rows]

    def transpose(self) -> PartialPermutation:
        out = np.full(self.n_cols, UNMATCHED, dtype=np.int64)
        rows = np.flatnonzero(self.cols >= 0)
        out[self.cols[rows]] = rows
        return PartialPermutation(out, self.n_rows)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.shape, dtype=np.int8)
        rows = np.flatnonzero(self.cols >= 0)
        dense[rows, self.cols[rows]] = 1
        return dense

    @classmethod
    def from_dense(cls, matrix) -> PartialPermutation:
        matrix = np.asarray(matrix)
        if matrix.ndim != 2:
            raise DimensionError("expected a 2-D matrix")
        if not np.isin(matrix, (0, 1)).all():
            raise ContractError("entries must be 0 or 1")
        if (matrix.sum(axis=1) > 1).any() or (matrix.sum(axis=0) > 1).any():
            raise ContractError("at most one 1 per row and per column")
        cols = np.where(matrix.any(axis=1), matrix.argmax(axis=1), UNMATCHED)
        return cls(cols, matrix.shape[1])

    @classmethod
    def identity(cls, m: int) -> PartialPermutation:
        return cls(np.arange(m), m)

    @classmethod
    def empty(cls, m: int, n: int) -> PartialPermutation:
        return cls(np.full(m, UNMATCHED), n)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PartialPermutation):
            return NotImplemented
        return self.n_cols == other.n_cols and np.array_equal(self.cols, other.cols)

    def __hash__(self):
        return hash((self.n_cols, self.cols.tobytes()))

    def __repr__(self) -> str:
        return f"PartialPermutation({self.cols.tolist()}, n_cols={self.n_cols})"


@dataclass(frozen=True, eq=False)
class UniverseMatching:
    """Object-to-universe matching: every row hits exactly one of ``d`` columns, injectively."""

    cols: np.ndarray
    d: int

    def __post_init__(self):
        object.__setattr__(self, "cols", _as_index_array(self.cols))
        if self.cols.size > self.d:
            raise ContractError(f"{self.cols.size} rows cannot map injectively into d={self.d}")
        if np.any(self.cols < 0):
            raise ContractError("every row of a universe matching needs a column")
        _check_injective(self.cols, self.d, "UniverseMatching")

    @property
    def m(self) -> int:
        return int(self.cols.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.d)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.shape, dtype=np.int8)
        dense[np.arange(self.m), self.cols] = 1
        return dense

    @classmethod
    def from_dense(cls, matrix) -> UniverseMatching:
        matrix = np.asarray(matrix)
        if matrix.ndim != 2:
            raise DimensionError("expected a 2-D matrix")
        if not np.isin(matrix, (0, 1)).all() or (matrix.sum(axis=1) != 1).any():
            raise ContractError("each row needs exactly one 1")
        return cls(matrix.argmax(axis=1), matrix.shape[1])

    def inverse(self) -> np.ndarray:
        """Map universe column -> row index (``-1`` for unused columns)."""
        inv = np.full(self.d, UNMATCHED, dtype=np.int64)
        inv[self.cols] = np.arange(self.m)
        return inv

    def __eq__(self, other) -> bool:
        if not isinstance(other, UniverseMatching):
            return NotImplemented
        return self.d == other.d and np.array_equal(self.cols, other.cols)

    def __hash__(self):
        return hash((self.d, self.cols.tobytes()))

    def __repr__(self) -> str:
        return f"UniverseMatching({self.cols.tolist()}, d={self.d})"


def pairwise_from_universe(xi: UniverseMatching, xj: UniverseMatching) -> PartialPermutation:
    """``X_i X_j^T``: row ``a`` of graph i matches row ``b`` of graph j iff both use the same column."""
    if xi.d != xj.d:
        raise DimensionError(f"universe sizes differ: {xi.d} vs {xj.d}")
    return PartialPermutation(xj.inverse()[xi.cols], xj.m)


@dataclass(frozen=True)
class MatchingCollection:
    """Pairwise matchings between ``k`` graphs, keyed by ordered pair ``(i, j)``."""

    sizes: tuple[int, ...]
    pairwise: Mapping[tuple[int, int], PartialPermutation]

    @property
    def k(self) -> int:
        return len(self.sizes)

    def get(self, i: int, j: int) -> PartialPermutation:
        try:
            x = self.pairwise[(i, j)]
        except KeyError:
            raise IncompleteCollectionError(f"missing pairwise entry ({i}, {j})") from None
        if x.shape != (self.sizes[i], self.sizes[j]):
            raise DimensionError(
                f"entry ({i}, {j}) has shape {x.shape}, expected {(self.sizes[i], self.sizes[j])}"
            )
        return x

    @classmethod
    def from_universe(cls, matchings: Sequence[UniverseMatching]) -> MatchingCollection:
        pairwise = {
            (i, j): pairwise_from_universe(xi, xj)
            for (i, xi), (j, xj) in itertools.product(enumerate(matchings), repeat=2)
        }
        return cls(tuple(x.m for x in matchings), pairwise)

    @classmethod
    def from_upper(
        cls, sizes: Sequence[int], upper: Mapping[tuple[int, int], PartialPermutation]
    ) -> MatchingCollection:
        """Complete a collection from entries with ``i < j`` (identity diagonal, transposed lower half)."""
        pairwise: dict[tuple[int, int], PartialPermutation] = {}
        for i, m in enumerate(sizes):
            pairwise[(i, i)] = PartialPermutation.identity(m)
        for (i, j), x in upper.items():
            pairwise[(i, j)] = x
            pairwise[(j, i)] = x.transpose()
        return cls(tuple(sizes), pairwise)


@dataclass(frozen=True)
class ConsistencyReport:
    identity_violations: list[tuple[int]] = field(default_factory=list)
    symmetry_violations: list[tuple[int, int]] = field(default_factory=list)
    transitivity_violations: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def is_consistent(self) -> bool:
        return not (self.identity_violations or self.symmetry_violations or self.transitivity_violations)


def identity_holds(x: PartialPermutation) -> bool:
    return x.n_rows == x.n_cols and np.array_equal(x.cols, np.arange(x.n_rows))


def symmetry_holds(xij: PartialPermutation, xji: PartialPermutation) -> bool:
    return xij == xji.transpose()


def transitivity_holds(xij: PartialPermutation, xjl: PartialPermutation, xil: PartialPermutation) -> bool:
    """Elementwise ``X_ij X_jl <= X_il``."""
    rows = np.flatnonzero(xij.cols >= 0)
    chained = xjl.cols[xij.cols[rows]]
    hit = chained >= 0
    return bool(np.array_equal(xil.cols[rows[hit]], chained[hit]))


def check_cycle_consistency(c: MatchingCollection) -> ConsistencyReport:
    """Check Identity, Symmetry and Partial Transitivity over every index triple."""
    k = c.k
    x = {(i, j): c.get(i, j) for i in range(k) for j in range(k)}
    report = ConsistencyReport()
    for i in range(k):
        if not identity_holds(x[i, i]):
            report.identity_violations.append((i,))
    for i, j in itertools.combinations(range(k), 2):
        if not symmetry_holds(x[i, j], x[j, i]):
            report.symmetry_violations.append((i, j))
    for i, j, l in itertools.product(range(k), repeat=3):
        if not transitivity_holds(x[i, j], x[j, l], x[i, l]):
            report.transitivity_violations.append((i, j, l))
    return report


class _DisjointSet:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the smaller id as root so roots are canonical class minima
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def factorize_pairwise(c: MatchingCollection) -> list[UniverseMatching]:
    """Recover universe matchings whose products reproduce ``c``.

    Nodes are merged along every match edge; each resulting class becomes
    one universe column. Columns are ordered by the smallest
    ``(graph, node)`` member of their class.
    """
    offsets = np.concatenate([[0], np.cumsum(c.sizes)]).astype(np.int64)
    total = int(offsets[-1])
    dsu = _DisjointSet(total)
    for i in range(c.k):
        for j in range(c.k):
            if i == j:
                continue
            x = c.get(i, j)
            for a, b in x.pairs():
                dsu.union(int(offsets[i]) + a, int(offsets[j]) + b)

    def node_name(flat: int) -> tuple[int, int]:
        g = int(np.searchsorted(offsets, flat, side="right")) - 1
        return g, flat - int(offsets[g])

    # flat ids are ordered by (graph, node), so sorted roots give canonical column order
    roots = [dsu.find(v) for v in range(total)]
    column = {r: n for n, r in enumerate(sorted(set(roots)))}
    d = len(column)

    members: dict[int, list[int]] = {}
    for v, r in enumerate(roots):
        members.setdefault(r, []).append(v)
    for r, vs in members.items():
        graphs = [node_name(v)[0] for v in vs]
        if len(set(graphs)) != len(graphs):
            names = [node_name(v) for v in vs]
            raise FactorizationError(
                f"class {names} holds two nodes of one graph; the input is not cycle-consistent"
            )

    result = [
        UniverseMatching([column[roots[int(offsets[i]) + a]] for a in range(m)], d)
        for i, m in enumerate(c.sizes)
    ]
    for i, j in itertools.product(range(c.k), repeat=2):
        if pairwise_from_universe(result[i], result[j]) != c.get(i, j):
            raise FactorizationError(
                f"pair ({i}, {j}) is not reproduced by the merged classes; the input is not cycle-consistent"
            )
    return result


def random_universe_matchings(
    rng: np.random.Generator, sizes: Iterable[int], d: int
) -> list[UniverseMatching]:
    """Draw independent uniformly random injective maps into ``d`` columns."""
    return [UniverseMatching(rng.permutation(d)[:m], d) for m in sizes]
