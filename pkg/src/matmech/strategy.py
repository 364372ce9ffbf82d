"""Strategy matrices, their sensitivities, and the stock constructions."""
from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.linalg as sla

from .workload import DomainShape, ShapeError, Workload

RANK_TOL = 1e-10


class RankError(ValueError):
    """The strategy does not have full column rank."""


def _as_matrix(a) -> np.ndarray:
    if isinstance(a, Strategy):
        return a.rows
    return np.atleast_2d(np.asarray(a, dtype=float))


class Strategy:
    """A full-column-rank query matrix ``A`` with its Gram ``A^T A`` cached.

    The Cholesky factor of the Gram (and the explicit inverse, when asked for)
    is computed on first use, once, under a lock.
    """

    def __init__(self, rows, shape=None, name: str = ""):
        rows = np.atleast_2d(np.array(rows, dtype=float))
        self.shape = DomainShape.of(shape if shape is not None else rows.shape[1])
        if rows.shape[1] != self.shape.n:
            raise ShapeError(f"strategy has {rows.shape[1]} columns, domain has n={self.shape.n}")
        rows.setflags(write=False)
        self.rows = rows
        gram = rows.T @ rows
        gram = (gram + gram.T) / 2
        gram.setflags(write=False)
        self.gram = gram
        self.name = name
        eig = np.linalg.eigvalsh(gram)
        if eig[-1] <= 0 or eig[0] <= RANK_TOL * eig[-1]:
            raise RankError(f"strategy {name or ''} is not full rank "
                            f"(eigenvalue ratio {eig[0] / max(eig[-1], 1e-300):.3g})")
        self._lock = threading.Lock()
        self._cho = None
        self._inverse = None

    @classmethod
    def from_gram(cls, gram, shape=None, name: str = "") -> "Strategy":
        """A square strategy whose Gram is ``gram`` (via the Cholesky factor)."""
        L = np.linalg.cholesky(np.asarray(gram, dtype=float))
        return cls(L.T, shape=shape, name=name)

    @property
    def n(self) -> int:
        return self.shape.n

    @property
    def p(self) -> int:
        return self.rows.shape[0]

    @property
    def cho(self):
        if self._cho is None:
            with self._lock:
                if self._cho is None:
                    self._cho = sla.cho_factor(self.gram, lower=True)
        return self._cho

    @property
    def gram_inverse(self) -> np.ndarray:
        if self._inverse is None:
            inv = sla.cho_solve(self.cho, np.eye(self.n))
            inv = (inv + inv.T) / 2
            inv.setflags(write=False)
            with self._lock:
                if self._inverse is None:
                    self._inverse = inv
        return self._inverse

    def solve(self, b) -> np.ndarray:
        """``(A^T A)^{-1} b``."""
        return sla.cho_solve(self.cho, np.asarray(b, dtype=float))

    @property
    def l2_sensitivity(self) -> float:
        return l2_sensitivity(self.rows)

    @property
    def l1_sensitivity(self) -> float:
        return l1_sensitivity(self.rows)

    def __repr__(self):
        return f"Strategy({self.name or '?'}, p={self.p}, n={self.n})"


def l2_sensitivity(matrix) -> float:
    A = _as_matrix(matrix)
    return float(np.sqrt((A * A).sum(axis=0)).max(initial=0.0))


def l1_sensitivity(matrix) -> float:
    A = _as_matrix(matrix)
    return float(np.abs(A).sum(axis=0).max(initial=0.0))


def column_norms(matrix, p: int = 2) -> np.ndarray:
    return np.linalg.norm(_as_matrix(matrix), ord=p, axis=0)


def is_column_uniform(matrix, p: int = 2, tol: float = 1e-9) -> bool:
    norms = column_norms(matrix, p)
    if norms.size == 0:
        return True
    top = norms.max()
    return bool(top - norms.min() <= tol * top)


# ------------------------------------------------------------ stock strategies

def identity_strategy(n: int) -> Strategy:
    return Strategy(np.eye(n), name="identity")


def _tree_intervals(n: int, branching: int) -> list[list[tuple[int, int]]]:
    levels = [[(0, n)]]
    while any(hi - lo > 1 for lo, hi in levels[-1]):
        nxt = []
        for lo, hi in levels[-1]:
            if hi - lo == 1:
                continue
            cuts = np.linspace(lo, hi, min(branching, hi - lo) + 1)
            cuts = np.ceil(cuts - 1e-9).astype(int)
            nxt.extend((a, b) for a, b in zip(cuts[:-1], cuts[1:]) if b > a)
        levels.append(nxt)
    return levels


def hierarchical_strategy(n: int, branching: int = 2) -> Strategy:
    """Subtree-count queries of a ``branching``-ary tree over the cells, breadth first."""
    if n < 1 or branching < 2:
        raise ValueError("need n >= 1 and branching >= 2")
    rows = []
    for level in _tree_intervals(n, branching):
        for lo, hi in level:
            r = np.zeros(n)
            r[lo:hi] = 1.0
            rows.append(r)
    return Strategy(np.array(rows), name="hierarchical")


def _haar(n: int) -> np.ndarray:
    if n == 1:
        return np.ones((1, 1))
    coarse = np.kron(_haar(n // 2), [1.0, 1.0])
    detail = np.kron(np.eye(n // 2), [1.0, -1.0])
    return np.vstack([coarse, detail])


def wavelet_strategy(n: int) -> Strategy:
    """Unnormalised Haar transform: the total, then +1/-1 differences, coarse to fine."""
    if n < 1 or n & (n - 1):
        raise ValueError(f"wavelet strategy needs a power of two, got {n}")
    return Strategy(_haar(n), name="wavelet")


def kron_strategy(factors: list[Strategy], name: str = "") -> Strategy:
    """Product strategy over a grid whose dimensions carry the given 1-D strategies."""
    rows = reduce(np.kron, [f.rows for f in factors])
    shape = DomainShape(tuple(f.n for f in factors))
    return Strategy(rows, shape=shape, name=name)


def hierarchical_strategy_nd(dims, branching: int = 2) -> Strategy:
    dims = DomainShape.of(dims).dims
    return kron_strategy([hierarchical_strategy(d, branching) for d in dims], name="hierarchical")


def wavelet_strategy_nd(dims) -> Strategy:
    dims = DomainShape.of(dims).dims
    return kron_strategy([wavelet_strategy(d) for d in dims], name="wavelet")


def workload_strategy(workload: Workload) -> Strategy:
    """Use the workload itself as the strategy.

    Without dense rows the Cholesky factor of the Gram stands in; it has the
    same Gram, hence the same (eps, delta) error, but not the same L1 norm.
    """
    if workload.rows is not None:
        return Strategy(workload.rows, shape=workload.shape, name="workload")
    return Strategy.from_gram(workload.gram, shape=workload.shape, name="workload")


# ----------------------------------------------------------------- redundancy

def reduce_rows(matrix, tol: float = 1e-9) -> np.ndarray:
    """Merge mutually parallel rows ``c_i q`` into the single row ``sqrt(sum c_i^2) q``.

    Zero rows are dropped.  Groups keep the position of their first member.
    """
    A = _as_matrix(matrix)
    norms = np.linalg.norm(A, axis=1)
    keep = norms > 0
    A, norms = A[keep], norms[keep]
    if A.shape[0] == 0:
        return A
    unit = A / norms[:, None]
    # sign-normalise so that parallel and anti-parallel rows share a direction
    first = np.argmax(np.abs(unit) > 1e-12, axis=1)
    sign = np.sign(unit[np.arange(len(unit)), first])
    unit = unit * sign[:, None]
    coef = norms * sign

    # parallel rows share a rounded key on at least one of two offset grids
    # (unless they straddle a rounding boundary on both); union-find joins them
    parent = list(range(len(unit)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for offset in (0.0, 0.5e-6):
        seen: dict[bytes, int] = {}
        for i, key in enumerate(np.round(unit + offset, 6) + 0.0):
            j = seen.setdefault(key.tobytes(), i)
            if j != i and abs(unit[i] @ unit[j]) >= 1 - tol:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    members: dict[int, list[int]] = {}
    for i in range(len(unit)):
        members.setdefault(find(i), []).append(i)
    reps = list(members.values())
    reps.sort(key=min)
    out = np.empty((len(reps), A.shape[1]))
    for j, g in enumerate(reps):
        lead = min(g)
        direction = unit[lead] * np.sign(coef[lead])
        out[j] = np.sqrt(np.sum(coef[g] ** 2)) * direction
    return out


def reduce_redundancy(strategy: Strategy, tol: float = 1e-9) -> Strategy:
    return Strategy(reduce_rows(strategy.rows, tol), shape=strategy.shape,
                    name=strategy.name)


# ---------------------------------------------------------- variable agnostic

@dataclass(frozen=True)
class VariableAgnosticForm:
    """Gram with constant diagonal ``a`` and constant off-diagonal ``b``."""

    a: float
    b: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.b < 0 or self.a + (self.n - 1) * self.b <= 0 or (self.n > 1 and self.a < self.b):
            raise ValueError(f"not a positive semidefinite uniform Gram: a={self.a}, b={self.b}")

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([self.a + (self.n - 1) * self.b] + [self.a - self.b] * (self.n - 1))

    @property
    def gram(self) -> np.ndarray:
        G = np.full((self.n, self.n), float(self.b))
        np.fill_diagonal(G, float(self.a))
        return G

    def optimal_error(self) -> float:
        """Total error (unit privacy factor) of the strategy from :func:`variable_agnostic_optimal`."""
        n = self.n
        return (np.sqrt(self.a + (n - 1) * self.b) + (n - 1) * np.sqrt(self.a - self.b)) ** 2 / n


def is_variable_agnostic(gram, tol: float = 1e-9) -> VariableAgnosticForm | None:
    G = np.asarray(gram, dtype=float)
    n = G.shape[0]
    diag = np.diag(G)
    scale = max(1.0, np.abs(G).max())
    if np.ptp(diag) > tol * scale:
        return None
    off = G[~np.eye(n, dtype=bool)]
    if off.size and np.ptp(off) > tol * scale:
        return None
    b = float(off.mean()) if off.size else 0.0
    try:
        return VariableAgnosticForm(float(diag.mean()), b, n)
    except ValueError:
        return None


def variable_agnostic_optimal(form: VariableAgnosticForm) -> Strategy:
    """Strategy attaining the singular value bound for a uniform Gram, ``n = 2^k``.

    The Sylvester-Hadamard matrix ``Q`` diagonalises the Gram; scaling its rows
    by the fourth roots of the Gram eigenvalues gives ``A^T A = G^{1/2}``, and
    since every column of ``Q`` is ``+-1`` the result is column uniform.
    """
    n = form.n
    if n < 1 or n & (n - 1):
        raise ValueError(f"n must be a power of two, got {n}")
    if n > 1 and form.a - form.b <= RANK_TOL * max(form.a, 1.0):
        raise RankError("degenerate form a == b has a singular Gram")
    Q = sla.hadamard(n).astype(float) if n > 1 else np.ones((1, 1))
    rows = np.diag(form.eigenvalues ** 0.25) @ Q.T / np.sqrt(n)
    return Strategy(rows, name="variable-agnostic")
