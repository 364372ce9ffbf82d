"""Query workloads over a multi-dimensional grid of cell counts.

Cells are ordered row-major over the grid dimensions (last dimension varies
fastest).  Every builder, the marginal lifter and tuple ingestion share this
order, so Gram closed forms and dense rows always agree.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

# dense enumeration guard: m * n float64 entries
MAX_DENSE_ENTRIES = 50_000_000
MAX_PREDICATE_CELLS = 30


class CapacityError(ValueError):
    """Raised when a dense enumeration would not fit the memory budget."""


class ShapeError(ValueError):
    pass


class IngestionError(ValueError):
    pass


@dataclass(frozen=True)
class DomainShape:
    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in np.atleast_1d(self.dims))
        if len(dims) == 0 or any(d < 1 for d in dims):
            raise ShapeError(f"invalid domain dims {self.dims!r}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def of(cls, shape) -> "DomainShape":
        if isinstance(shape, DomainShape):
            return shape
        return cls(tuple(np.atleast_1d(shape)))

    @property
    def n(self) -> int:
        return math.prod(self.dims)

    @property
    def k(self) -> int:
        return len(self.dims)

    def __repr__(self):
        return f"DomainShape{self.dims}"


@dataclass(frozen=True)
class RangeQuery:
    """Axis-aligned range: one closed, 1-based interval ``(lo, hi)`` per dimension."""

    bounds: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "bounds", tuple((int(lo), int(hi)) for lo, hi in self.bounds)
        )

    def validate(self, shape: DomainShape) -> None:
        if len(self.bounds) != shape.k:
            raise ShapeError(f"{self} has {len(self.bounds)} dims, domain has {shape.k}")
        for (lo, hi), d in zip(self.bounds, shape.dims):
            if not 1 <= lo <= hi <= d:
                raise ShapeError(f"{self} out of bounds for {shape}")

    @property
    def center(self) -> tuple[float, ...]:
        return tuple((lo + hi) / 2 for lo, hi in self.bounds)

    def to_row(self, shape: DomainShape) -> np.ndarray:
        self.validate(shape)
        grid = np.zeros(shape.dims)
        grid[tuple(slice(lo - 1, hi) for lo, hi in self.bounds)] = 1.0
        return grid.ravel()


def _freeze(a: np.ndarray | None) -> np.ndarray | None:
    if a is None:
        return None
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Workload:
    """A batch of linear queries, held as dense rows, as the Gram ``W^T W``, or both."""

    shape: DomainShape
    rows: np.ndarray | None = None
    gram: np.ndarray | None = None
    m: int | None = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        shape = DomainShape.of(self.shape)
        object.__setattr__(self, "shape", shape)
        rows, gram = self.rows, self.gram
        if rows is None and gram is None:
            raise ValueError("workload needs rows or a Gram matrix")
        n = shape.n
        if rows is not None:
            rows = np.atleast_2d(np.asarray(rows, dtype=float))
            if rows.shape[0] == 0:
                rows = rows.reshape(0, n)
            if rows.shape[1] != n:
                raise ShapeError(f"rows have {rows.shape[1]} columns, domain has n={n}")
            computed = rows.T @ rows
            if gram is None:
                gram = computed
            else:
                gram = np.asarray(gram, dtype=float)
                scale = max(1.0, np.linalg.norm(gram))
                if np.linalg.norm(gram - computed) > 1e-9 * scale:
                    raise ValueError("gram does not match rows^T rows")
            object.__setattr__(self, "m", rows.shape[0])
        else:
            gram = np.asarray(gram, dtype=float)
        if gram.shape != (n, n):
            raise ShapeError(f"gram has shape {gram.shape}, expected {(n, n)}")
        if not np.allclose(gram, gram.T, rtol=0, atol=1e-9 * max(1.0, np.abs(gram).max(initial=0))):
            raise ValueError("gram is not symmetric")
        if np.any(np.diag(gram) < 0):
            raise ValueError("gram has a negative diagonal entry")
        object.__setattr__(self, "rows", _freeze(rows))
        object.__setattr__(self, "gram", _freeze(gram))

    @classmethod
    def from_rows(cls, rows, shape=None, name="") -> "Workload":
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        return cls(DomainShape.of(shape if shape is not None else rows.shape[1]), rows=rows, name=name)

    @classmethod
    def from_gram(cls, gram, shape=None, m=None, name="") -> "Workload":
        gram = np.asarray(gram, dtype=float)
        return cls(DomainShape.of(shape if shape is not None else gram.shape[0]), gram=gram, m=m, name=name)

    @property
    def n(self) -> int:
        return self.shape.n

    def stacked(self, other: "Workload") -> "Workload":
        """Rows of ``self`` followed by rows of ``other`` (Grams add)."""
        if other.shape != self.shape:
            raise ShapeError("cannot stack workloads over different domains")
        if self.rows is not None and other.rows is not None:
            return Workload(self.shape, rows=np.vstack([self.rows, other.rows]))
        m = None if self.m is None or other.m is None else self.m + other.m
        return Workload(self.shape, gram=self.gram + other.gram, m=m)


# ---------------------------------------------------------------- ranges

def _ranges_1d(d: int) -> list[tuple[int, int]]:
    return [(a, b) for a in range(1, d + 1) for b in range(a, d + 1)]


def _range_matrix_1d(d: int) -> np.ndarray:
    ranges = _ranges_1d(d)
    R = np.zeros((len(ranges), d))
    for i, (a, b) in enumerate(ranges):
        R[i, a - 1:b] = 1.0
    return R


def _gram_range_1d(d: int) -> np.ndarray:
    # number of ranges [a, b] with a <= min(i, j) and b >= max(i, j)
    i = np.arange(1, d + 1, dtype=np.int64)
    lo = np.minimum.outer(i, i)
    hi = np.maximum.outer(i, i)
    return lo * (d - hi + 1)


def count_all_range(shape) -> int:
    shape = DomainShape.of(shape)
    return math.prod(d * (d + 1) // 2 for d in shape.dims)


def gram_all_range(shape) -> np.ndarray:
    """Closed-form Gram of all axis-aligned range queries (Kronecker of 1-D counts)."""
    shape = DomainShape.of(shape)
    G = np.ones((1, 1), dtype=np.int64)
    for d in shape.dims:
        G = np.kron(G, _gram_range_1d(d))
    return G.astype(float)


def build_all_range(shape, dense: bool = False, max_entries: int = MAX_DENSE_ENTRIES) -> Workload:
    shape = DomainShape.of(shape)
    m = count_all_range(shape)
    gram = gram_all_range(shape)
    name = "allrange" + "x".join(map(str, shape.dims))
    if not dense:
        return Workload(shape, gram=gram, m=m, name=name)
    if m * shape.n > max_entries:
        raise CapacityError(f"AllRange{shape.dims} has {m} x {shape.n} dense entries")
    rows = np.ones((1, 1))
    for d in shape.dims:
        rows = np.kron(rows, _range_matrix_1d(d))
    return Workload(shape, rows=rows, gram=gram, name=name)


def all_ranges(shape) -> list[RangeQuery]:
    shape = DomainShape.of(shape)
    per_dim = [_ranges_1d(d) for d in shape.dims]
    return [RangeQuery(b) for b in itertools.product(*per_dim)]


# ------------------------------------------------------------ predicates

def gram_all_predicate(n: int) -> np.ndarray:
    """Gram of all 2^n 0/1 queries: ``2^(n-1)`` on the diagonal, ``2^(n-2)`` off it."""
    if n < 1:
        raise ShapeError("n must be positive")
    if n == 1:
        return np.ones((1, 1))
    G = np.full((n, n), float(2 ** (n - 2)))
    np.fill_diagonal(G, float(2 ** (n - 1)))
    return G


def build_all_predicate(n: int, dense: bool = False, max_entries: int = MAX_DENSE_ENTRIES) -> Workload:
    shape = DomainShape((n,))
    gram = gram_all_predicate(n)
    if not dense:
        return Workload(shape, gram=gram, m=2 ** n, name=f"allpredicate{n}")
    if n > MAX_PREDICATE_CELLS or (2 ** n) * n > max_entries:
        raise CapacityError(f"AllPredicate({n}) is too large to enumerate")
    codes = np.arange(2 ** n)[:, None]
    rows = ((codes >> np.arange(n)[::-1]) & 1).astype(float)
    return Workload(shape, rows=rows, gram=gram, name=f"allpredicate{n}")


def identity_workload(n: int) -> Workload:
    return Workload(DomainShape((n,)), rows=np.eye(n), name=f"identity{n}")


# --------------------------------------------------------------- sampling

def _range_weights_1d(d: int, mode: str, beta: float, n: int) -> tuple[list, np.ndarray]:
    ranges = _ranges_1d(d)
    if mode == "uniform":
        w = np.ones(len(ranges))
    elif mode == "biased":
        mid = (d + 1) / 2
        dist = np.array([abs((a + b) / 2 - mid) for a, b in ranges])
        # decays with the distance of the range center from the domain edge
        w = np.exp(-beta * (dist.max() - dist) / n)
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    return ranges, w / w.sum()


def sample_ranges(shape, count: int, mode: str = "uniform", beta: float = 8.0,
                  seed=None, distinct: bool = False) -> list[RangeQuery]:
    """Draw ``count`` range queries.

    ``uniform`` picks uniformly among all ranges.  ``biased`` weights a range by
    ``exp(-beta * (D - dist) / n)`` where ``dist`` is the L1 distance of its center
    from the domain center and ``D`` the largest such distance, so ranges centred
    near the domain edges are favoured.  Both weights factor over dimensions, so
    each dimension is drawn independently.  With ``distinct=True`` repeats are
    rejected, which amounts to weighted sampling without replacement.
    """
    shape = DomainShape.of(shape)
    if count < 1:
        raise ValueError("count must be >= 1")
    if distinct and count > count_all_range(shape):
        raise ValueError("more distinct ranges requested than exist")
    rng = np.random.default_rng(seed)
    tables = [_range_weights_1d(d, mode, beta, shape.n) for d in shape.dims]

    def draw(size):
        picks = [rng.choice(len(r), size=size, p=p) for r, p in tables]
        return [RangeQuery(tuple(tables[j][0][idx[j]] for j in range(shape.k)))
                for idx in zip(*picks)]

    if not distinct:
        return draw(count)
    seen: dict[RangeQuery, None] = {}
    while len(seen) < count:
        for q in draw(count - len(seen)):
            if len(seen) < count:
                seen.setdefault(q, None)
    return list(seen)


def sample_range_workload(shape, count: int, mode: str = "uniform", beta: float = 8.0,
                          seed=None, distinct: bool = False) -> Workload:
    shape = DomainShape.of(shape)
    queries = sample_ranges(shape, count, mode, beta, seed, distinct)
    rows = np.array([q.to_row(shape) for q in queries])
    return Workload(shape, rows=rows, name=f"sampled-{mode}-{count}")


# -------------------------------------------------------------- marginals

def lift_marginal(shape, dim: int, query) -> np.ndarray:
    """Extend a query over dimension ``dim`` to the full domain by summing out the others."""
    shape = DomainShape.of(shape)
    query = np.asarray(query, dtype=float).ravel()
    if query.size != shape.dims[dim]:
        raise ShapeError(
            f"marginal query of length {query.size} does not match dimension {dim} of size {shape.dims[dim]}")
    view = [1] * shape.k
    view[dim] = shape.dims[dim]
    return np.broadcast_to(query.reshape(view), shape.dims).ravel().copy()


def lift_marginal_rows(shape, dim: int, rows) -> np.ndarray:
    """:func:`lift_marginal` applied to every row of ``rows``."""
    shape = DomainShape.of(shape)
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != shape.dims[dim]:
        raise ShapeError(
            f"marginal rows of length {rows.shape[1]} do not match dimension {dim} of size {shape.dims[dim]}")
    view = [rows.shape[0]] + [1] * shape.k
    view[dim + 1] = shape.dims[dim]
    return np.broadcast_to(rows.reshape(view), (rows.shape[0],) + shape.dims).reshape(rows.shape[0], -1)


def build_marginal_workload(shape, queries_per_dim: Sequence[Sequence]) -> Workload:
    shape = DomainShape.of(shape)
    if len(queries_per_dim) > shape.k:
        raise ShapeError("more query sets than dimensions")
    rows = [lift_marginal(shape, dim, q)
            for dim, qs in enumerate(queries_per_dim) for q in qs]
    rows = np.array(rows) if rows else np.zeros((0, shape.n))
    return Workload(shape, rows=rows, name="marginals")


def marginal_range_workload(shape) -> Workload:
    """All one-dimensional ranges on every dimension, lifted to the full domain."""
    shape = DomainShape.of(shape)
    return build_marginal_workload(shape, [_range_matrix_1d(d) for d in shape.dims])


# ------------------------------------------------------------ cell counts

@dataclass(frozen=True)
class CellVector:
    """Cell counts ``x`` (or an inferred estimate of them) over a domain."""

    shape: DomainShape
    x: np.ndarray
    provenance: str = "synthetic"

    def __post_init__(self):
        shape = DomainShape.of(self.shape)
        object.__setattr__(self, "shape", shape)
        x = np.asarray(self.x, dtype=float).ravel()
        if x.size != shape.n:
            raise ShapeError(f"cell vector has {x.size} entries, domain has n={shape.n}")
        if self.provenance not in ("ingested", "synthetic", "inferred"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.provenance == "ingested" and (np.any(x < 0) or np.any(x != np.round(x))):
            raise ValueError("ingested counts must be nonnegative integers")
        object.__setattr__(self, "x", _freeze(x))

    def __len__(self):
        return self.x.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.x, dtype=dtype)


# ------------------------------------------------------------ equivalence

def equivalent(w1: Workload, w2: Workload, tol: float = 1e-9) -> bool:
    if w1.shape.n != w2.shape.n:
        raise ShapeError("workloads are over different domains")
    diff = np.linalg.norm(w1.gram - w2.gram)
    return bool(diff <= tol * max(1.0, np.linalg.norm(w1.gram)))


# -------------------------------------------------------------- ingestion

def _same_value(a, b) -> bool:
    """Category match; numbers compare numerically so ``2011`` matches ``2011.0``."""
    try:
        return float(a) == float(b)
    except (TypeError, ValueError):
        return str(a) == str(b)


def _edges(buckets):
    """Numeric edges of an interval partition ``{"edges": [...]}``, else None."""
    if isinstance(buckets, Mapping):
        if "edges" not in buckets:
            raise ValueError("interval buckets are given as {'edges': [...]}")
        edges = np.asarray(buckets["edges"], dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be at least two increasing numbers")
        return edges
    return None


def _bucket_index(value, buckets) -> int | None:
    edges = _edges(buckets)
    if edges is not None:
        # bucket i is [edges[i], edges[i+1])
        try:
            v = float(value)
        except (TypeError, ValueError):
            return None
        i = int(np.searchsorted(edges, v, side="right")) - 1
        return i if 0 <= i < len(edges) - 1 else None
    for i, b in enumerate(buckets):
        members = b if isinstance(b, (list, tuple)) else [b]
        if any(_same_value(value, mb) for mb in members):
            return i
    return None


def bucket_count(buckets) -> int:
    edges = _edges(buckets)
    return len(buckets) if edges is None else len(edges) - 1


def ingest_cells(records: Iterable, partition: Mapping[str, Sequence]) -> CellVector:
    """Count records into the cells of a partitioned relational domain.

    ``partition`` maps each attribute to its ordered buckets: either a list of
    categories, where an entry may itself be a list of values grouped into one
    bucket, or ``{"edges": [e_0, ..., e_k]}`` for numeric intervals
    ``[e_i, e_{i+1})``.  Records are
    mappings from attribute name to value, or sequences in partition order.
    Cells follow row-major order over the attributes as listed.
    """
    attrs = list(partition)
    dims = [bucket_count(partition[a]) for a in attrs]
    counts = np.zeros(dims, dtype=np.int64)
    for rec in records:
        idx = []
        for j, a in enumerate(attrs):
            value = rec[a] if isinstance(rec, Mapping) else rec[j]
            i = _bucket_index(value, partition[a])
            if i is None:
                raise IngestionError(f"value {value!r} of attribute {a!r} falls outside every bucket")
            idx.append(i)
        counts[tuple(idx)] += 1
    return CellVector(DomainShape(tuple(dims)), counts.ravel(), provenance="ingested")
