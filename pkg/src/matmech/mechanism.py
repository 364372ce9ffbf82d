"""Gaussian, Laplace and matrix mechanisms with least-squares inference.

All randomness comes from Philox, a counter-based generator: a run is keyed
by its seed, and Monte-Carlo trial ``t`` reads its own counter block, so
trials can be evaluated in any order (or in parallel) with identical results.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .strategy import Strategy, l1_sensitivity, l2_sensitivity
from .workload import CellVector, ShapeError, Workload


def philox(seed: int | None, trial: int = 0) -> np.random.Generator:
    """Generator for ``(seed, trial)``; the trial index occupies the top counter word."""
    key = 0 if seed is None else int(seed) % 2 ** 64
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, int(trial)]))


@dataclass(frozen=True)
class NoiseSource:
    distribution: str = "gaussian"   # "gaussian" (scale = std dev), "laplace", or "zero"
    scale: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.distribution not in ("gaussian", "laplace", "zero"):
            raise ValueError(f"unknown noise distribution {self.distribution!r}")
        if self.scale < 0:
            raise ValueError("noise scale must be nonnegative")

    def sample(self, size, trial: int = 0) -> np.ndarray:
        if self.distribution == "zero":
            return np.zeros(size)
        rng = philox(self.seed, trial)
        if self.distribution == "gaussian":
            return rng.normal(0.0, self.scale, size)
        return rng.laplace(0.0, self.scale, size)


def _cells(x) -> np.ndarray:
    return np.asarray(x.x if isinstance(x, CellVector) else x, dtype=float).ravel()


def _dense(W) -> np.ndarray:
    if isinstance(W, Workload):
        if W.rows is None:
            raise ValueError("this mechanism needs the workload's dense rows")
        return W.rows
    return np.atleast_2d(np.asarray(W, dtype=float))


def gaussian_sigma(sensitivity: float, epsilon: float, delta: float) -> float:
    if epsilon <= 0 or not 0 < delta < 1:
        raise ValueError("need epsilon > 0 and 0 < delta < 1")
    return sensitivity * math.sqrt(2 * math.log(2 / delta)) / epsilon


def gaussian_mechanism(W, x, epsilon: float, delta: float, seed=None,
                       zero_noise: bool = False) -> np.ndarray:
    """``W x`` plus i.i.d. normal noise with std ``||W||_2 sqrt(2 ln(2/delta)) / epsilon``."""
    rows, x = _dense(W), _cells(x)
    sigma = gaussian_sigma(l2_sensitivity(rows), epsilon, delta)
    noise = NoiseSource("zero" if zero_noise else "gaussian", sigma, seed)
    return rows @ x + noise.sample(rows.shape[0])


def laplace_mechanism(W, x, epsilon: float, seed=None, zero_noise: bool = False) -> np.ndarray:
    """``W x`` plus i.i.d. Laplace noise of scale ``||W||_1 / epsilon``."""
    rows, x = _dense(W), _cells(x)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    b = l1_sensitivity(rows) / epsilon
    noise = NoiseSource("zero" if zero_noise else "laplace", b, seed)
    return rows @ x + noise.sample(rows.shape[0])


@dataclass(frozen=True)
class MechanismOutput:
    answers: np.ndarray
    x_hat: CellVector
    strategy_answers: np.ndarray
    noise: NoiseSource

    def metadata(self, epsilon: float, delta: float, strategy: Strategy) -> dict:
        return {"epsilon": epsilon, "delta": delta, "distribution": self.noise.distribution,
                "scale": self.noise.scale, "seed": self.noise.seed,
                "l2_sensitivity": strategy.l2_sensitivity,
                "l1_sensitivity": strategy.l1_sensitivity}


def strategy_noise(strategy: Strategy, epsilon: float, delta: float, seed=None,
                   zero_noise: bool = False) -> NoiseSource:
    """Gaussian noise for ``delta > 0``; Laplace (pure epsilon) when ``delta == 0``."""
    if zero_noise:
        kind, scale = "zero", 0.0
    elif delta == 0:
        kind, scale = "laplace", strategy.l1_sensitivity / epsilon
    else:
        kind, scale = "gaussian", gaussian_sigma(strategy.l2_sensitivity, epsilon, delta)
    return NoiseSource(kind, scale, seed)


def matrix_mechanism(W, A: Strategy, x, epsilon: float, delta: float, seed=None,
                     zero_noise: bool = False) -> MechanismOutput:
    """Answer the strategy with noise, infer ``x_hat`` by least squares, return ``W x_hat``."""
    x_vec = _cells(x)
    if x_vec.size != A.n:
        raise ShapeError(f"data has {x_vec.size} cells, strategy has n={A.n}")
    rows = _dense(W)
    if rows.shape[1] != A.n:
        raise ShapeError("workload and strategy are over different domains")
    noise = strategy_noise(A, epsilon, delta, seed, zero_noise)
    y = A.rows @ x_vec + noise.sample(A.p)
    x_hat = A.solve(A.rows.T @ y)
    shape = A.shape
    return MechanismOutput(rows @ x_hat, CellVector(shape, x_hat, "inferred"), y, noise)


def simulate_matrix_mechanism(W, A: Strategy, x, epsilon: float, delta: float,
                              trials: int, seed=None) -> np.ndarray:
    """Answers of ``trials`` independent runs (``trials x m``), trial ``t`` keyed by ``(seed, t)``."""
    rows, x_vec = _dense(W), _cells(x)
    noise = strategy_noise(A, epsilon, delta, seed)
    Z = np.stack([noise.sample(A.p, trial=t) for t in range(trials)], axis=1)
    Y = (A.rows @ x_vec)[:, None] + Z
    X_hat = A.solve(A.rows.T @ Y)
    return (rows @ X_hat).T


def simulate_gaussian_mechanism(W, x, epsilon: float, delta: float, trials: int,
                                seed=None) -> np.ndarray:
    rows, x_vec = _dense(W), _cells(x)
    sigma = gaussian_sigma(l2_sensitivity(rows), epsilon, delta)
    noise = NoiseSource("gaussian", sigma, seed)
    Z = np.stack([noise.sample(rows.shape[0], trial=t) for t in range(trials)])
    return (rows @ x_vec)[None, :] + Z


# ------------------------------------------------------------ consistency

def linear_relations(W, decimals: int = 9) -> list[tuple[int, int, int]]:
    """Index triples ``(i, j, k)`` with ``w_i + w_j = w_k`` (up to rounding at ``decimals``).

    Quadratic in the number of rows.
    """
    rows = _dense(W)
    lookup: dict[bytes, int] = {}
    for k, r in enumerate(np.round(rows, decimals) + 0.0):
        lookup.setdefault(r.tobytes(), k)
    found = []
    for i in range(rows.shape[0]):
        sums = np.round(rows[i] + rows[i:], decimals) + 0.0
        for off, s in enumerate(sums):
            k = lookup.get(s.tobytes())
            if k is not None:
                found.append((i, i + off, k))
    return found


def consistency_check(answers, workload, tol: float = 1e-9) -> bool:
    """Whether answers respect every ``w_i + w_j = w_k`` relation among workload rows."""
    a = np.asarray(answers, dtype=float).ravel()
    rows = _dense(workload)
    if a.size != rows.shape[0]:
        raise ShapeError("one answer per workload row expected")
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    for i, j, k in linear_relations(rows):
        if abs(a[i] + a[j] - a[k]) > tol * scale:
            return False
    return True
