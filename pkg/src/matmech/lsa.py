"""Level Selection Algorithm: greedy, level-by-level strategy construction.

A level is a partition of the cells into hyperrectangles.  Each level starts
as the single all-ones query and is refined by threshold bisections, each one
kept only if it lowers the workload's total error.  A finished level is
appended to the strategy only if it lowers the error again.  Every level
puts exactly one 1 in each column, so the output stays column uniform.

The inverse of the current strategy Gram is maintained with low-rank
Woodbury updates: a split removes one 0/1 row ``v`` and adds ``v'`` and ``v''``
with ``v' + v'' = v``.  Scoring a candidate split only needs block sums of
``X^{-1}`` and ``X^{-1} G X^{-1}`` over the split query's cells.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .strategy import Strategy, reduce_rows
from .workload import DomainShape, Workload

log = logging.getLogger(__name__)

Box = tuple[tuple[int, int], ...]   # half-open, 0-based (lo, hi) per dimension

REFRESH_EVERY = 256
TIE_TOL = 1e-12


class SmwError(ArithmeticError):
    """The Woodbury capacitance matrix is numerically singular."""


@dataclass(frozen=True)
class LsaConfig:
    max_levels: int | None = None
    tol: float = 1e-10

    def __post_init__(self):
        if self.max_levels is not None and self.max_levels < 1:
            raise ValueError("max_levels must be >= 1 when given")


# ----------------------------------------------------------------- levels

def box_size(box: Box) -> int:
    return math.prod(hi - lo for lo, hi in box)


def box_cells(box: Box, shape: DomainShape) -> np.ndarray:
    """Flat (row-major) cell indices covered by ``box``."""
    if len(box) == 1:
        return np.arange(*box[0])
    grids = np.ix_(*[np.arange(lo, hi) for lo, hi in box])
    return np.ravel_multi_index(grids, shape.dims).ravel()


def box_row(box: Box, shape: DomainShape) -> np.ndarray:
    r = np.zeros(shape.n)
    if len(box) == 1:
        r[box[0][0]:box[0][1]] = 1.0
    else:
        r[box_cells(box, shape)] = 1.0
    return r


def split_box(box: Box, dim: int, pos: int) -> tuple[Box, Box]:
    """Split at offset ``pos`` (1 <= pos < width) along ``dim``: cells below go first."""
    lo, hi = box[dim]
    if not 0 < pos < hi - lo:
        raise ValueError(f"no split at {pos} for interval {box[dim]}")
    left = box[:dim] + ((lo, lo + pos),) + box[dim + 1:]
    right = box[:dim] + ((lo + pos, hi),) + box[dim + 1:]
    return left, right


@dataclass(frozen=True)
class Level:
    boxes: tuple[Box, ...]
    shape: DomainShape

    def __post_init__(self):
        cover = np.zeros(self.shape.n, dtype=int)
        for b in self.boxes:
            if box_size(b) == 0:
                raise ValueError(f"empty query {b} in level")
            cover[box_cells(b, self.shape)] += 1
        if self.boxes and not np.all(cover == 1):
            raise ValueError("level queries do not partition the domain")

    @classmethod
    def whole(cls, shape: DomainShape) -> "Level":
        return cls((tuple((0, d) for d in shape.dims),), shape)

    def rows(self) -> np.ndarray:
        if not self.boxes:
            return np.zeros((0, self.shape.n))
        return np.array([box_row(b, self.shape) for b in self.boxes])

    def __len__(self):
        return len(self.boxes)


@dataclass(frozen=True)
class SmwUpdate:
    """Replace the 0/1 row ``removed`` by ``added_a`` and ``added_b`` (which sum to it)."""

    removed: np.ndarray
    added_a: np.ndarray
    added_b: np.ndarray
    check: bool = field(default=True, compare=False)   # off only for general rank-3 updates

    def __post_init__(self):
        if self.check and np.abs(self.added_a + self.added_b - self.removed).max() > 1e-9:
            raise ValueError("split rows must sum to the removed row")

    @property
    def U(self) -> np.ndarray:
        return np.vstack([self.removed, self.added_a, self.added_b])

    LAMBDA = np.diag([-1.0, 1.0, 1.0])


def _woodbury(Xi: np.ndarray, U: np.ndarray, C_inv: np.ndarray, M: np.ndarray | None = None):
    """Inverse of ``X + U^T C U`` from ``Xi = X^{-1}``, and optionally ``Xi' G Xi'`` from ``M = Xi G Xi``."""
    P = Xi @ U.T
    cap = C_inv + U @ P
    try:
        S = np.linalg.inv(cap)
    except np.linalg.LinAlgError:
        raise SmwError("singular capacitance matrix") from None
    # a 1-norm condition estimate; past 1e12 the update loses too many digits
    if not np.abs(S).sum(0).max() * np.abs(cap).sum(0).max() <= 1e12:
        raise SmwError("singular capacitance matrix")
    PS = P @ ((S + S.T) / 2)
    Xi_new = Xi - PS @ P.T
    if M is None:
        return Xi_new, None
    R = M @ U.T
    # M' = M - PS R^T - R PS^T + PS (U R) PS^T = M + PS K^T + K PS^T
    K = PS @ (U @ R) / 2 - R
    M_new = M + np.hstack([PS, K]) @ np.hstack([K, PS]).T
    return Xi_new, M_new


def smw_update(inverse: np.ndarray, update: SmwUpdate) -> np.ndarray:
    """Inverse of the Gram after a split, in O(n^2) from the current inverse.

    With ``U = [v; v'; v'']`` and ``Lambda = diag(-1, 1, 1)`` the new Gram is
    ``X + U^T Lambda U``, whose inverse is
    ``X^{-1} - X^{-1} U^T (Lambda + U X^{-1} U^T)^{-1} U X^{-1}``.
    Raises :class:`SmwError` when the 3x3 capacitance matrix is singular.
    """
    Xi = np.asarray(inverse, dtype=float)
    lam = SmwUpdate.LAMBDA   # its own inverse
    out, _ = _woodbury(Xi, update.U, lam)
    return (out + out.T) / 2


# ------------------------------------------------------------------ state

class LsaState:
    """Gram of the strategy under construction, its inverse, and error bookkeeping."""

    def __init__(self, workload_gram, shape, base_rows=None, extra_sens2: float = 0.0):
        self.shape = DomainShape.of(shape)
        n = self.shape.n
        self.G = np.asarray(workload_gram, dtype=float)
        base = np.eye(n) if base_rows is None else np.atleast_2d(np.asarray(base_rows, dtype=float))
        self.X = base.T @ base
        self.sens2 = float(np.max(np.diag(self.X))) + extra_sens2
        self.updates = 0
        self.refresh()

    def refresh(self):
        cho = sla.cho_factor(self.X, lower=True)
        Xi = sla.cho_solve(cho, np.eye(self.shape.n))
        self.Xi = (Xi + Xi.T) / 2
        M = self.Xi @ self.G @ self.Xi
        self.M = (M + M.T) / 2
        self._trace = None

    @property
    def trace(self) -> float:
        if self._trace is None:
            self._trace = float(np.einsum("ij,ji->", self.G, self.Xi))
        return self._trace

    @property
    def error(self) -> float:
        return self.sens2 * self.trace

    def drift(self) -> float:
        return float(np.linalg.norm(self.X @ self.Xi - np.eye(self.shape.n)))

    def _apply(self, U: np.ndarray, C_inv: np.ndarray, gram_delta: np.ndarray):
        self.X = self.X + gram_delta
        self._trace = None
        try:
            self.Xi, self.M = _woodbury(self.Xi, U, C_inv, self.M)
        except SmwError:
            log.warning("Woodbury update rejected; refactorising")
            self.refresh()
            return
        self.updates += 1
        if self.updates % REFRESH_EVERY == 0:
            self.refresh()

    def add_rows(self, rows: np.ndarray):
        """Append rows to the strategy (one 1 per column adds one to ``sens2``)."""
        rows = np.atleast_2d(rows)
        self._apply(rows, np.eye(rows.shape[0]), rows.T @ rows)
        self.sens2 += float(np.max((rows * rows).sum(axis=0)))

    def apply_split(self, update: SmwUpdate):
        U = update.U
        self._apply(U, SmwUpdate.LAMBDA, U.T @ SmwUpdate.LAMBDA @ U)

    def snapshot(self):
        return self.X.copy(), self.Xi.copy(), self.M.copy(), self.sens2

    def restore(self, snap):
        X, Xi, M, sens2 = snap
        self.X, self.Xi, self.M, self.sens2 = X.copy(), Xi.copy(), M.copy(), sens2
        self._trace = None


# ----------------------------------------------------------------- search

def _split_scores(Xs: np.ndarray, Ms: np.ndarray, sizes: tuple[int, ...], dim: int) -> np.ndarray:
    """Trace reduction for every split position along ``dim``.

    Splitting ``v = v' + v''`` changes the Gram by ``-(v' v''^T + v'' v'^T)``, a
    rank-2 Woodbury update with ``C = [[0, -1], [-1, 0]]``; with block sums
    ``a, b, c`` of ``X^{-1}`` and ``am, bm, cm`` of ``X^{-1} G X^{-1}`` over
    ``(S', S')``, ``(S', S'')``, ``(S'', S'')`` the trace drops by
    ``(c am - 2 (b - 1) bm + a cm) / (a c - (b - 1)^2)``.
    """
    k = len(sizes)
    if k == 1:
        B, Bm = Xs, Ms
    else:
        others = tuple(i for i in range(k) if i != dim) + tuple(k + i for i in range(k) if i != dim)
        B = Xs.reshape(sizes + sizes).sum(axis=others)
        Bm = Ms.reshape(sizes + sizes).sum(axis=others)

    def blocks(B):
        # prefix sums give the (S', S'), (S', S'') and (S'', S'') block sums at once
        P = B.cumsum(0).cumsum(1)
        a = P.diagonal()[:-1]
        b = P[:-1, -1] - a
        return a, b, P[-1, -1] - a - 2 * b

    a, b, c = blocks(B)
    am, bm, cm = blocks(Bm)
    det = a * c - (b - 1) ** 2
    return (c * am - 2 * (b - 1) * bm + a * cm) / det


@dataclass(frozen=True)
class SplitChoice:
    dim: int
    position: int
    error: float


def best_split(state: LsaState, box: Box, tol: float = 1e-10) -> SplitChoice | None:
    """Best single threshold split of ``box``, or ``None`` if none lowers the error enough.

    Ties (within a relative 1e-12) go to the lowest dimension, then the lowest
    position.  ``position`` is the number of slices kept in the first half.
    """
    if box_size(box) < 2:
        return None
    sizes = tuple(hi - lo for lo, hi in box)
    if len(box) == 1:
        sub = (slice(*box[0]), slice(*box[0]))
    else:
        cells = box_cells(box, state.shape)
        sub = np.ix_(cells, cells)
    Xs, Ms = state.Xi[sub], state.M[sub]
    base = state.sens2 * state.trace
    gains = [state.sens2 * _split_scores(Xs, Ms, sizes, dim) if s > 1 else None
             for dim, s in enumerate(sizes)]
    best_gain = max(float(g.max()) for g in gains if g is not None)
    best = base - best_gain
    # errors within TIE_TOL of the best count as ties
    cutoff = best + TIE_TOL * abs(best)
    for dim, g in enumerate(gains):
        if g is None:
            continue
        hits = np.flatnonzero(base - g <= cutoff)
        if hits.size:
            choice = SplitChoice(dim, int(hits[0]) + 1, float(base - g[hits[0]]))
            break
    if choice.error < state.error * (1 - tol):
        return choice
    return None


def level_error_delta(state: LsaState, level: Level) -> float:
    """Error of the current strategy with ``level`` appended, minus its error now."""
    if len(level) == 0:
        return 0.0
    U = level.rows()
    Xi_new, _ = _woodbury(state.Xi, U, np.eye(U.shape[0]))
    sens2 = state.sens2 + float(np.max((U * U).sum(axis=0)))
    new_error = sens2 * float(np.einsum("ij,ji->", state.G, Xi_new))
    return new_error - state.error


# ----------------------------------------------------------------- driver

@dataclass
class LsaResult:
    strategy: Strategy
    levels: list[Level]
    error_trajectory: list[float]
    wall_time: float
    drift: float
    base_rows: int
    reduced_rows: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def raw_rows(self) -> int:
        return self.strategy.p

    def log(self) -> dict:
        return {
            "levels_accepted": len(self.levels),
            "level_sizes": [len(lv) for lv in self.levels],
            "error_trajectory": self.error_trajectory,
            "raw_rows": self.raw_rows,
            "reduced_rows": self.reduced_rows,
            "wall_time_s": self.wall_time,
            "inverse_drift": self.drift,
            **self.extra,
        }


def _build_level(state: LsaState, tol: float) -> list[Box]:
    boxes: list[Box] = list(Level.whole(state.shape).boxes)
    while True:
        updated = False
        nxt: list[Box] = []
        for box in boxes:
            choice = best_split(state, box, tol)
            if choice is None:
                nxt.append(box)
                continue
            left, right = split_box(box, choice.dim, choice.position)
            state.apply_split(SmwUpdate(box_row(box, state.shape),
                                        box_row(left, state.shape),
                                        box_row(right, state.shape)))
            nxt.extend([left, right])
            updated = True
        boxes = nxt
        if not updated:
            return boxes


def run_lsa(workload: Workload, config: LsaConfig | None = None, *, base_rows=None,
            extra_sens2: float = 0.0, reduce: bool = False) -> LsaResult:
    """Run the Level Selection Algorithm on ``workload`` (only its Gram is used).

    ``base_rows`` replaces the starting identity strategy and ``extra_sens2``
    adds a fixed amount to its squared column norm; both exist for the
    two-phase generalised design.
    """
    config = config or LsaConfig()
    t0 = time.perf_counter()
    shape = workload.shape
    n = shape.n
    base = np.eye(n) if base_rows is None else np.atleast_2d(np.asarray(base_rows, dtype=float))
    state = LsaState(workload.gram, shape, base, extra_sens2)
    current = state.error
    trajectory = [current]
    levels: list[Level] = []
    whole = np.ones((1, n))
    while config.max_levels is None or len(levels) < config.max_levels:
        snap = state.snapshot()
        state.add_rows(whole)
        boxes = _build_level(state, config.tol)
        candidate = state.error
        if candidate < current * (1 - config.tol):
            levels.append(Level(tuple(boxes), shape))
            current = candidate
            trajectory.append(current)
            log.debug("level %d: %d queries, error %.6g", len(levels), len(boxes), current)
        else:
            state.restore(snap)
            break
    rows = np.vstack([base] + [lv.rows() for lv in levels])
    strategy = Strategy(rows, shape=shape, name="lsa")
    result = LsaResult(strategy, levels, trajectory, time.perf_counter() - t0,
                       state.drift(), base.shape[0])
    if reduce:
        result.reduced_rows = reduce_rows(rows).shape[0]
    return result


def design(workload: Workload, config: LsaConfig | None = None) -> Strategy:
    return run_lsa(workload, config).strategy


def level_rows(levels: Sequence[Level]) -> np.ndarray:
    return np.vstack([lv.rows() for lv in levels]) if levels else np.zeros((0, 0))
