"""Scaling the strategy search: separation over marginals and two-phase generalisation.

Separation splits a workload of lifted one-way-marginal queries into one small
problem per dimension, designed on that dimension's marginal domain.  The
sub-strategies are then stacked with the total-sum query ``q0`` and answered
together, so inference can use every dimension's answers at once.

Generalisation merges contiguous cells into ``m`` blocks, designs a strategy
on the merged domain, then refines inside every block.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize_scalar

from .error import PrivacyParams, total_error
from .lsa import LsaConfig, LsaResult, LsaState, _build_level, run_lsa
from .strategy import Strategy, reduce_rows
from .workload import DomainShape, ShapeError, Workload, lift_marginal, lift_marginal_rows


class NotSeparableError(ValueError):
    """A workload row is not a lifted one-way-marginal query."""


# ------------------------------------------------------------- separation

@dataclass(frozen=True)
class SeparationPlan:
    shape: DomainShape
    sub_workloads: tuple[Workload, ...]      # one per dimension, over (d_i,)
    assignment: tuple[int, ...]              # owning dimension of each input row
    q0_fraction: float | None = None         # None: chosen to minimise the error

    def __post_init__(self):
        if self.q0_fraction is not None and not 0 < self.q0_fraction < 1:
            raise ValueError("the budget fraction of q0 must lie in (0, 1)")

    @property
    def q0(self) -> np.ndarray:
        return np.ones(self.shape.n)

    @property
    def active(self) -> list[int]:
        return [i for i, w in enumerate(self.sub_workloads) if w.m]

    def to_json(self) -> str:
        return json.dumps({
            "shape": list(self.shape.dims),
            "assignment": list(self.assignment),
            "q0_fraction": self.q0_fraction,
            "sub_workloads": [w.rows.tolist() for w in self.sub_workloads],
        })

    @classmethod
    def from_json(cls, text: str) -> "SeparationPlan":
        d = json.loads(text)
        shape = DomainShape.of(d["shape"])
        subs = tuple(Workload(DomainShape((size,)), rows=np.asarray(r, dtype=float).reshape(-1, size))
                     for size, r in zip(shape.dims, d["sub_workloads"]))
        return cls(shape, subs, tuple(d["assignment"]), d["q0_fraction"])


def owning_dimension(row: np.ndarray, shape: DomainShape) -> int | None:
    """The dimension a lifted marginal row varies along; 0 for a constant row."""
    g = np.asarray(row, dtype=float).reshape(shape.dims)
    scale = max(1.0, float(np.abs(g).max(initial=0.0)))
    for dim in range(shape.k):
        index = [0] * shape.k
        index[dim] = slice(None)
        marginal = g[tuple(index)]
        view = [1] * shape.k
        view[dim] = shape.dims[dim]
        if np.abs(g - marginal.reshape(view)).max() <= 1e-12 * scale:
            return dim
    return None


def separate(workload: Workload, shape=None, q0_fraction: float | None = None) -> SeparationPlan:
    if workload.rows is None:
        raise ValueError("separation needs the workload's dense rows")
    shape = DomainShape.of(shape if shape is not None else workload.shape)
    if shape.n != workload.n:
        raise ShapeError("shape does not match the workload")
    rows = np.asarray(workload.rows, dtype=float)
    cubes = rows.reshape((-1,) + shape.dims)
    scale = np.maximum(1.0, np.abs(rows).max(axis=1, initial=0.0))
    owner = np.full(rows.shape[0], -1)
    marginals = []
    for dim in range(shape.k):
        # the slice through cell 0 of every other dimension, broadcast back
        index = [slice(None)] + [0] * shape.k
        index[dim + 1] = slice(None)
        marginal = cubes[tuple(index)]
        view = [rows.shape[0]] + [1] * shape.k
        view[dim + 1] = shape.dims[dim]
        dev = np.abs(cubes - marginal.reshape(view)).reshape(rows.shape[0], -1).max(axis=1, initial=0.0)
        owner[(owner < 0) & (dev <= 1e-12 * scale)] = dim
        marginals.append(marginal)
    if (owner < 0).any():
        i = int(np.flatnonzero(owner < 0)[0])
        raise NotSeparableError(f"row {i} spans more than one dimension")
    assignment = [int(d) for d in owner]
    per_dim = [list(marginals[d][owner == d]) for d in range(shape.k)]
    subs = tuple(Workload(DomainShape((d,)),
                          rows=np.array(r) if r else np.zeros((0, d)), name=f"dim{j}")
                 for j, (d, r) in enumerate(zip(shape.dims, per_dim)))
    return SeparationPlan(shape, subs, tuple(assignment), q0_fraction)


@dataclass
class SeparatedDesign:
    plan: SeparationPlan
    strategies: dict[int, Strategy]
    sub_errors: dict[int, float]        # each dimension alone, full budget
    q0_fraction: float
    rows: np.ndarray                    # combined strategy, squared sensitivity 1
    error: float                        # exact error of the combined strategy
    split_error: float                  # q0 and dimensions answered independently
    wall_time: float
    runs: dict[int, LsaResult] = field(default_factory=dict)

    def composite_rows(self) -> np.ndarray:
        return self.rows

    def log(self) -> dict:
        return {"error": self.error, "split_error": self.split_error,
                "q0_fraction": self.q0_fraction, "wall_time_s": self.wall_time,
                "rows": int(self.rows.shape[0]),
                "sub_errors": {str(k): v for k, v in self.sub_errors.items()},
                "levels": {str(k): len(r.levels) for k, r in self.runs.items()}}


def combine(plan: SeparationPlan, strategies: dict[int, Strategy], q0_fraction: float) -> np.ndarray:
    """``sqrt(f0) q0`` over the lifted sub-strategies, scaled to unit column norm.

    Every lifted row keeps its own dimension's weights; the dimensions share the
    remaining ``1 - f0`` of the squared-sensitivity budget in proportion to the
    squared sensitivities of their strategies, i.e. they are stacked unchanged.
    """
    shape = plan.shape
    total = sum(float(np.max(np.diag(A.gram))) for A in strategies.values())
    rows = [math.sqrt(q0_fraction) * plan.q0[None, :]]
    scale = math.sqrt((1 - q0_fraction) / total) if total else 0.0
    for dim in sorted(strategies):
        rows.append(scale * lift_marginal_rows(shape, dim, strategies[dim].rows))
    return np.vstack(rows)


def combined_error(workload: Workload, rows: np.ndarray, privacy: PrivacyParams | None = None) -> float:
    """Error of a unit-sensitivity strategy that need not have full rank.

    The workload must lie in the row space of ``rows``; inference then uses the
    pseudo-inverse and the error is ``P trace(W (A^T A)^+ W^T)``.
    """
    P = 1.0 if privacy is None else privacy.factor
    pinv = np.linalg.pinv(rows, rcond=1e-10)
    X = workload.rows @ pinv
    residual = X @ rows - workload.rows
    if np.abs(residual).max(initial=0.0) > 1e-7 * max(1.0, np.abs(workload.rows).max()):
        raise ValueError("workload is not in the row space of the combined strategy")
    s2 = float(np.max((rows * rows).sum(axis=0)))
    return P * s2 * float((X * X).sum())


def _marginal_factor(shape: DomainShape) -> np.ndarray:
    """``L`` with ``M = L K`` for the stacked marginalisation map ``M`` and ``K K^T = I``.

    ``M M^T`` has the closed form ``(n / d_i) I`` on diagonal blocks and
    ``n / (d_i d_j)`` everywhere off them, so ``L`` comes from its eigenpairs.
    """
    n, dims = shape.n, shape.dims
    offsets = np.cumsum((0,) + dims)
    G = np.empty((offsets[-1], offsets[-1]))
    for i, di in enumerate(dims):
        for j, dj in enumerate(dims):
            block = np.full((di, dj), n / (di * dj))
            if i == j:
                block = (n / di) * np.eye(di)
            G[offsets[i]:offsets[i + 1], offsets[j]:offsets[j + 1]] = block
    lam, U = np.linalg.eigh(G)
    keep = lam > 1e-10 * lam.max()
    return U[:, keep] * np.sqrt(lam[keep])


class _MarginalTerms:
    """Pieces of the combined error that do not depend on the ``q0`` share.

    In the marginal coordinates the combined Gram is ``f0 Q0 + s QA`` with
    ``s = (1 - f0) / sum_i ||A_i||^2``, so each share costs one small
    pseudo-inverse.
    """

    def __init__(self, plan: SeparationPlan, strategies: dict[int, Strategy], L: np.ndarray,
                 privacy: PrivacyParams | None):
        dims = plan.shape.dims
        offsets = np.cumsum((0,) + dims)
        size = offsets[-1]
        self.total = sum(float(np.max(np.diag(A.gram))) for A in strategies.values())
        E0 = np.zeros((size, size))
        E0[offsets[0]:offsets[1], offsets[0]:offsets[1]] = 1.0   # q0 through dimension 0
        EA = np.zeros((size, size))
        for d, A in strategies.items():
            EA[offsets[d]:offsets[d + 1], offsets[d]:offsets[d + 1]] = A.gram
        VtV = np.zeros((size, size))
        for d, W in enumerate(plan.sub_workloads):
            if W.m:
                VtV[offsets[d]:offsets[d + 1], offsets[d]:offsets[d + 1]] = W.gram
        Q0, QA = L.T @ E0 @ L, L.T @ EA @ L
        # both terms are PSD, so every f0 in (0, 1) shares the null space of Q0 + QA;
        # restricting to its complement turns each pseudo-inverse into a Cholesky solve
        lam, U = np.linalg.eigh(Q0 + QA)
        B = U[:, lam > 1e-10 * lam.max()]
        self.Q0, self.QA, self.V = B.T @ Q0 @ B, B.T @ QA @ B, B.T @ (L.T @ VtV @ L) @ B
        self.P = 1.0 if privacy is None else privacy.factor

    def error(self, f0: float) -> float:
        """Exact error of the combined strategy, computed on the marginal coordinates."""
        scale2 = (1 - f0) / self.total if self.total else 0.0
        inner = f0 * self.Q0 + scale2 * self.QA
        s2 = f0 + scale2 * self.total
        trace = float(np.trace(sla.cho_solve(sla.cho_factor(inner), self.V)))
        return self.P * s2 * trace


def design_separated(plan: SeparationPlan, config: LsaConfig | None = None,
                     privacy: PrivacyParams | None = None) -> SeparatedDesign:
    """One LSA run per dimension, combined with ``q0`` into a single strategy.

    ``plan.q0_fraction`` fixes the share of ``q0``; when it is ``None`` the share
    minimising the combined error is searched for.  The error is exact for the
    combined strategy under joint least-squares inference.  ``split_error`` is
    the cost of answering ``q0`` and each dimension independently with the same
    shares (``P / f0 + sum_i E_i / f_i``), which joint inference never exceeds.
    """
    t0 = time.perf_counter()
    P = 1.0 if privacy is None else privacy.factor
    runs, strategies, errors = {}, {}, {}
    seen: dict[bytes, int] = {}
    for dim in plan.active:
        W = plan.sub_workloads[dim]
        # a design depends only on the Gram, so repeated dimensions are designed once
        key = W.gram.tobytes()
        if key in seen:
            runs[dim] = runs[seen[key]]
        else:
            seen[key] = dim
            runs[dim] = run_lsa(W, config)
        strategies[dim] = runs[dim].strategy
        errors[dim] = total_error(W, strategies[dim], privacy)
    err = _MarginalTerms(plan, strategies, _marginal_factor(plan.shape), privacy).error

    if plan.q0_fraction is not None:
        f0 = plan.q0_fraction
    else:
        f0 = float(minimize_scalar(err, bounds=(1e-6, 0.5), method="bounded",
                                   options={"xatol": 1e-6}).x)
    error = err(f0)
    rows = combine(plan, strategies, f0)
    sens = {d: float(np.max(np.diag(A.gram))) for d, A in strategies.items()}
    total = sum(sens.values())
    split = P / f0 + sum(errors[d] * total / ((1 - f0) * sens[d]) for d in strategies)
    return SeparatedDesign(plan, strategies, errors, f0, rows, error, split,
                           time.perf_counter() - t0, runs)


def relift(plan: SeparationPlan) -> Workload:
    """The input workload rebuilt from the sub-workloads, in the original row order."""
    counters = [0] * plan.shape.k
    rows = []
    for dim in plan.assignment:
        rows.append(lift_marginal(plan.shape, dim, plan.sub_workloads[dim].rows[counters[dim]]))
        counters[dim] += 1
    rows = np.array(rows) if rows else np.zeros((0, plan.shape.n))
    return Workload(plan.shape, rows=rows, name="relifted")


# --------------------------------------------------------- generalisation

@dataclass(frozen=True)
class GeneralizationPlan:
    n: int
    m: int
    blocks: tuple[tuple[int, int], ...]      # half-open cell ranges
    phase1: Workload                         # over the m merged cells
    gram: np.ndarray                         # original W^T W, for the phase-2 problems

    @property
    def aggregation(self) -> np.ndarray:
        """``B`` (n x m): cell ``c`` maps to its block."""
        B = np.zeros((self.n, self.m))
        for b, (lo, hi) in enumerate(self.blocks):
            B[lo:hi, b] = 1.0
        return B

    def block_workload(self, b: int) -> Workload:
        lo, hi = self.blocks[b]
        return Workload(DomainShape((hi - lo,)), gram=self.gram[lo:hi, lo:hi], name=f"block{b}")

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "m": self.m, "blocks": [list(b) for b in self.blocks]})


def contiguous_blocks(n: int, m: int) -> tuple[tuple[int, int], ...]:
    """``m`` contiguous blocks, the first ``n mod m`` of them one cell longer."""
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    size, extra = divmod(n, m)
    out, lo = [], 0
    for b in range(m):
        hi = lo + size + (b < extra)
        out.append((lo, hi))
        lo = hi
    return tuple(out)


def default_groups(n: int) -> int:
    return max(1, min(n, round(n ** (1 / 3))))


def generalize(workload: Workload, shape=None, m: int | None = None) -> GeneralizationPlan:
    """Merge cells (in row-major order) into ``m`` contiguous blocks."""
    shape = DomainShape.of(shape if shape is not None else workload.shape)
    n = shape.n
    if n != workload.n:
        raise ShapeError("shape does not match the workload")
    m = default_groups(n) if m is None else m
    blocks = contiguous_blocks(n, m)
    B = np.zeros((n, m))
    for b, (lo, hi) in enumerate(blocks):
        B[lo:hi, b] = 1.0
    if workload.rows is not None:
        phase1 = Workload(DomainShape((m,)), rows=workload.rows @ B, name="generalized")
    else:
        phase1 = Workload(DomainShape((m,)), gram=B.T @ workload.gram @ B, m=workload.m,
                          name="generalized")
    return GeneralizationPlan(n, m, blocks, phase1, np.asarray(workload.gram))


@dataclass
class GeneralizedDesign:
    plan: GeneralizationPlan
    strategy: Strategy
    phase1: LsaResult
    phase2_levels: int
    error_trajectory: list[float]
    wall_time: float

    def log(self) -> dict:
        return {"m": self.plan.m, "phase1_levels": len(self.phase1.levels),
                "phase2_levels": self.phase2_levels,
                "error_trajectory": self.error_trajectory,
                "rows": self.strategy.p, "wall_time_s": self.wall_time}


def design_generalized(plan: GeneralizationPlan, config: LsaConfig | None = None,
                       shape=None) -> GeneralizedDesign:
    """Design on the merged domain, then refine all blocks level by level in lockstep.

    Each block's subproblem starts from the identity plus one block-total row
    weighted by ``tau = 1 / [(A1^T A1)^{-1}]_bb``, the precision phase 1 already
    gives that block total.  A phase-2 level is one partition per block, hence a
    partition of the whole domain, so the final strategy stays column uniform.
    Splits are scored inside their block; a level is kept only if the
    exact error of the full strategy built so far drops.  That costs one
    factorisation of an ``n x n`` Gram per level, against the many low-rank
    updates the split search needs on the whole domain.
    """
    config = config or LsaConfig()
    t0 = time.perf_counter()
    shape = DomainShape.of(shape if shape is not None else plan.n)
    p1 = run_lsa(plan.phase1, config)
    A1 = p1.strategy
    expanded = A1.rows @ plan.aggregation.T
    if all(hi - lo == 1 for lo, hi in plan.blocks):
        strategy = Strategy(expanded, shape=shape, name="lsa-generalized")
        return GeneralizedDesign(plan, strategy, p1, 0, [], time.perf_counter() - t0)

    s1 = float(np.max(np.diag(A1.gram)))
    inv1 = A1.gram_inverse
    states = []
    for b, (lo, hi) in enumerate(plan.blocks):
        size = hi - lo
        base = np.vstack([np.eye(size), math.sqrt(1.0 / inv1[b, b]) * np.ones((1, size))])
        states.append(LsaState(plan.gram[lo:hi, lo:hi], (size,), base))

    def level_matrix(parts):
        level = np.zeros((sum(len(p) for p in parts), plan.n))
        r = 0
        for (lo, _), boxes in zip(plan.blocks, parts):
            for box in boxes:
                (a, z), = box
                level[r, lo + a:lo + z] = 1.0
                r += 1
        return level

    X = expanded.T @ expanded + np.eye(plan.n)

    def exact(X, sens2):
        return sens2 * float(np.trace(sla.cho_solve(sla.cho_factor(X), plan.gram)))

    sens2 = s1 + 1.0
    current = exact(X, sens2)
    trajectory = [current]
    levels: list[list] = []
    while config.max_levels is None or len(levels) < config.max_levels:
        snaps = [st.snapshot() for st in states]
        parts = []
        for st in states:
            st.add_rows(np.ones((1, st.shape.n)))
            parts.append(_build_level(st, config.tol))
        level = level_matrix(parts)
        X_new = X + level.T @ level
        candidate = exact(X_new, sens2 + 1.0)
        if candidate < current * (1 - config.tol):
            levels.append(level)
            X = X_new
            sens2 += 1.0
            current = candidate
            trajectory.append(current)
        else:
            for st, snap in zip(states, snaps):
                st.restore(snap)
            break

    rows = [expanded, np.eye(plan.n)] + levels
    strategy = Strategy(reduce_rows(np.vstack(rows)), shape=shape, name="lsa-generalized")
    return GeneralizedDesign(plan, strategy, p1, len(levels), trajectory,
                             time.perf_counter() - t0)
