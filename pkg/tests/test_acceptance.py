"""Acceptance checks, one per criterion.

Each test prints a single ``PASS``/``FAIL`` line (straight to the terminal) and
then asserts on the same condition.  The optional long LSA reproductions run
only with ``MATMECH_EXTENDED=1``.
"""
import math
import os
import time

import numpy as np
import pytest

from matmech.error import PrivacyParams, error_ratio, query_errors, svd_bound, total_error
from matmech.experiment import run_sampled_curves
from matmech.lsa import SmwUpdate, run_lsa, smw_update
from matmech.mechanism import (consistency_check, simulate_gaussian_mechanism,
                               simulate_matrix_mechanism)
from matmech.scaling import design_generalized, design_separated, generalize, separate
from matmech.strategy import (Strategy, hierarchical_strategy, hierarchical_strategy_nd,
                              identity_strategy, is_column_uniform, is_variable_agnostic,
                              l1_sensitivity, reduce_redundancy, reduce_rows,
                              variable_agnostic_optimal, wavelet_strategy, wavelet_strategy_nd,
                              workload_strategy)
from matmech.workload import (Workload, build_all_range, gram_all_predicate,
                              marginal_range_workload, sample_range_workload)
from oracles import Y4_1, Y4_2, rel


@pytest.fixture
def verdict(capsys):
    def report(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, detail
    return report


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------- criterion 1

def test_c01_svd_bound_reproduction(verdict):
    parts, ok = [], True
    for dims, target in (((1024,), 5.32e6), ((32, 32), 4.39e6)):
        bound, secs = timed(svd_bound, build_all_range(dims))
        good = abs(bound / target - 1) <= 0.02 and secs < 30
        ok &= good
        parts.append(f"{dims}: {bound:.6g} vs {target:.3g} ({bound / target - 1:+.2%}, {secs:.2f}s)")
    verdict("C1 SVD bound", ok, "; ".join(parts))


# ---------------------------------------------------------------- criterion 2

def test_c02_ratio_table(verdict):
    t0 = time.perf_counter()
    W1 = build_all_range((1024,))
    W2 = build_all_range((32, 32))
    table = [
        ("1024 workload", W1, workload_strategy(W1), 50.58),
        ("1024 identity", W1, identity_strategy(1024), 33.75),
        ("1024 hierarchical", W1, hierarchical_strategy(1024), 2.14),
        ("1024 wavelet", W1, wavelet_strategy(1024), 1.84),
        ("32x32 workload", W2, workload_strategy(W2), 17.25),
        ("32x32 identity", W2, identity_strategy(1024), 8.15),
        ("32x32 hierarchical", W2, hierarchical_strategy_nd((32, 32)), 2.92),
        ("32x32 wavelet", W2, wavelet_strategy_nd((32, 32)), 2.23),
    ]
    bounds = {id(W1): svd_bound(W1), id(W2): svd_bound(W2)}
    parts, ok = [], True
    for label, W, A, target in table:
        r = total_error(W, A) / bounds[id(W)]
        good = abs(r / target - 1) <= 0.03
        ok &= good
        parts.append(f"{label} {r:.4g}/{target}{'' if good else ' x'}")
    secs = time.perf_counter() - t0
    ok &= secs < 120
    verdict("C2 ratio table", ok, f"{', '.join(parts)} ({secs:.1f}s)")


# ---------------------------------------------------------------- criterion 3

def test_c03_allpredicate_optimality(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for n in (4, 8, 16, 32, 64):
        G = gram_all_predicate(n)
        A = variable_agnostic_optimal(is_variable_agnostic(G))
        W = Workload.from_gram(G)
        err = total_error(W, A)
        closed = 2 ** (n - 2) / n * (n - 1 + math.sqrt(n + 1)) ** 2
        worst = max(worst, rel(err, svd_bound(W)), rel(err, closed))
    secs = time.perf_counter() - t0
    verdict("C3 AllPredicate optimality", worst <= 1e-9 and secs < 1,
            f"max relative gap {worst:.2e} over n=4..64 ({secs:.3f}s)")


# ---------------------------------------------------------------- criterion 4

def test_c04_lsa_quality(verdict):
    W = build_all_range((128,))
    res, secs = timed(run_lsa, W)
    A = res.strategy
    ratio = error_ratio(W, A)
    traj = res.error_trajectory
    decreasing = all(b < a for a, b in zip(traj, traj[1:]))
    uniform = is_column_uniform(A.rows, tol=1e-12)
    ok = uniform and ratio <= 1.6 and decreasing and secs < 600
    verdict("C4 LSA quality", ok,
            f"AllRange(128) ratio {ratio:.4f}, {len(res.levels)} levels, column uniform {uniform}, "
            f"strictly decreasing {decreasing} ({secs:.2f}s)")


@pytest.mark.slow
@pytest.mark.skipif(os.environ.get("MATMECH_EXTENDED") != "1", reason="set MATMECH_EXTENDED=1")
def test_c04_lsa_extended(verdict):
    W = build_all_range((1024,))
    r1024 = error_ratio(W, run_lsa(W).strategy)
    res = run_lsa(build_all_range((512,)), reduce=True)
    levels, reduced = len(res.levels), res.reduced_rows
    ok = abs(r1024 - 1.26) <= 0.1 and abs(levels - 33) <= 4 and abs(reduced / 1931 - 1) <= 0.15
    verdict("C4 extended (soft)", ok,
            f"AllRange(1024) ratio {r1024:.4f} (1.26 +- 0.1); AllRange(512) {levels} levels (33 +- 4), "
            f"{res.raw_rows} raw / {reduced} reduced rows (1931 +- 15%)")


# ---------------------------------------------------------------- criterion 5

def test_c05_smw_correctness(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 65))
        R = rng.normal(size=(n, n))
        S = R @ R.T / n + np.eye(n)
        v = (rng.random(n) < 0.5).astype(float)
        if v.sum() < 2:
            v[:2] = 1.0
        support = np.flatnonzero(v)
        a = np.zeros(n)
        a[rng.choice(support, size=int(rng.integers(1, support.size)), replace=False)] = 1.0
        X = S + np.outer(v, v)
        got = smw_update(np.linalg.inv(X), SmwUpdate(v, a, v - a))
        direct = np.linalg.inv(S + np.outer(a, a) + np.outer(v - a, v - a))
        worst = max(worst, np.linalg.norm(got - direct) / np.linalg.norm(direct))
    secs = time.perf_counter() - t0
    verdict("C5 SMW correctness", worst <= 1e-8 and secs < 30,
            f"1000 updates, max relative Frobenius error {worst:.2e} ({secs:.2f}s)")


# ---------------------------------------------------------------- criterion 6

def test_c06_redundancy_equivalence(verdict):
    rng = np.random.default_rng(6)
    worst, l1_ok = 0.0, True
    for _ in range(200):
        n = int(rng.integers(1, 9))
        W = Workload.from_rows(rng.normal(size=(int(rng.integers(1, 10)), n)))
        base = rng.normal(size=(n + int(rng.integers(0, 4)), n))
        base[:n] += 3 * np.eye(n)
        picks = rng.integers(0, base.shape[0], size=int(rng.integers(1, 5)))
        dup = base[picks] * rng.choice([-2.0, -1.0, 0.5, 1.0, 1.5], size=(picks.size, 1))
        A = Strategy(np.vstack([base, dup]))
        R = reduce_redundancy(A)
        worst = max(worst, rel(total_error(W, R), total_error(W, A)))
        l1_ok &= l1_sensitivity(R.rows) <= l1_sensitivity(A.rows) * (1 + 1e-12)
    y1, y2 = l1_sensitivity(Y4_1), l1_sensitivity(reduce_rows(Y4_1))
    strict = y2 < y1 and np.allclose(reduce_rows(Y4_1), Y4_2)
    verdict("C6 redundancy equivalence", worst <= 1e-10 and l1_ok and strict,
            f"200 cases, max relative error change {worst:.2e}, L1 never increased {l1_ok}, "
            f"fixed example L1 {y1:g} -> {y2:.4f}")


# ---------------------------------------------------------------- criterion 7

def test_c07_bound_dominance_and_monotonicity(verdict):
    rng = np.random.default_rng(7)
    worst_slack, monotone = -np.inf, True
    for _ in range(500):
        n = int(rng.integers(1, 17))
        rows = rng.normal(size=(int(rng.integers(1, 20)), n))
        W = Workload.from_rows(rows)
        extra = rng.normal(size=(int(rng.integers(0, 5)), n))
        A = Strategy(np.vstack([rng.normal(size=(n, n)) + 2 * np.eye(n), extra]))
        err, bound = total_error(W, A), svd_bound(W)
        worst_slack = max(worst_slack, (bound - err) / err)
        more = Workload.from_rows(np.vstack([rows, rng.normal(size=(int(rng.integers(1, 6)), n))]))
        monotone &= svd_bound(more) >= bound * (1 - 1e-12)
    ok = worst_slack <= 1e-9 and monotone
    verdict("C7 bound dominance", ok,
            f"500 pairs, max (bound - error)/error {worst_slack:.3g}, augmentation monotone {monotone}")


# ---------------------------------------------------------------- criterion 8

def test_c08_mechanism_statistics(verdict):
    t0 = time.perf_counter()
    W = build_all_range((8,), dense=True)
    x = np.array([5.0, 0, 3, 12, 7, 1, 0, 9])
    eps, delta, trials = 1.0, 1e-3, 100_000
    truth = W.rows @ x
    parts, ok = [], True
    for seed, A in enumerate((identity_strategy(8), hierarchical_strategy(8), wavelet_strategy(8))):
        sims = simulate_matrix_mechanism(W, A, x, eps, delta, trials, seed=100 + seed)
        expected = query_errors(W, A, PrivacyParams(eps, delta))
        mse = ((sims - truth) ** 2).mean(axis=0)
        worst_mse = float(np.max(np.abs(mse / expected - 1)))
        z = np.abs(sims.mean(axis=0) - truth) / np.sqrt(expected / trials)
        consistent = all(consistency_check(sims[t], W) for t in range(50))
        good = worst_mse <= 0.03 and z.max() <= 4 and consistent
        ok &= good
        parts.append(f"{A.name}: MSE gap {worst_mse:.2%}, max |z| {z.max():.2f}, consistent {consistent}")
    direct = simulate_gaussian_mechanism(W, x, eps, delta, 50, seed=9)
    inconsistent = not any(consistency_check(d, W) for d in direct)
    secs = time.perf_counter() - t0
    ok &= inconsistent and secs < 120
    verdict("C8 mechanism statistics", ok,
            f"{'; '.join(parts)}; direct Gaussian answers inconsistent {inconsistent} ({secs:.1f}s)")


# ---------------------------------------------------------------- criterion 9

def test_c09_separation(verdict):
    W = marginal_range_workload((16, 16))
    t0 = time.perf_counter()
    # interleaved so that slow spells on the machine hit both sides alike
    sep_times, joint_times = [], []
    for _ in range(9):
        sep, t = timed(lambda: design_separated(separate(W)))
        sep_times.append(t)
        joint_res, t = timed(run_lsa, W)
        joint_times.append(t)
    sep_t, joint_t = min(sep_times), min(joint_times)
    joint = total_error(W, joint_res.strategy)
    speed = joint_t / sep_t
    gap = sep.error / joint - 1
    secs = time.perf_counter() - t0
    ok = gap <= 0.05 and speed >= 10 and secs < 900
    verdict("C9 separation", ok,
            f"16x16 two-marginal ranges: separated {sep.error:.6g} vs joint {joint:.6g} ({gap:+.2%}), "
            f"best-of-9 {sep_t * 1e3:.1f} ms vs {joint_t * 1e3:.1f} ms ({speed:.1f}x)")


# --------------------------------------------------------------- criterion 10

def test_c10_generalization(verdict):
    W = sample_range_workload((512,), 2000, "biased", seed=7)
    gen, gen_t = timed(lambda: design_generalized(generalize(W, m=8)))
    plain, plain_t = timed(lambda: run_lsa(W))
    e_gen, e_plain = total_error(W, gen.strategy), total_error(W, plain.strategy)
    ratio, speed = e_gen / e_plain, plain_t / gen_t
    verdict("C10 generalization", ratio <= 1.5 and speed >= 5,
            f"n=512, m=8, 2000 biased ranges: error {ratio:.3f}x plain LSA, "
            f"{gen_t:.1f}s vs {plain_t:.1f}s ({speed:.1f}x faster)")


# --------------------------------------------------------------- criterion 11

def test_c11_sampled_curves(verdict):
    sizes = (100, 1000, 10000)
    pts = run_sampled_curves((256,), sizes=sizes, seed=0)
    uni = [p.ratio for p in pts if p.mode == "uniform"]
    bia = [p.ratio for p in pts if p.mode == "biased"]
    gap_u = [abs(1 - r) for r in uni]
    gap_b = [abs(1 - r) for r in bia]
    monotone = all(b < a for a, b in zip(gap_u, gap_u[1:]))
    dominates = all(u < b for u, b in zip(gap_u, gap_b))
    fmt = lambda rs: ", ".join(f"{r:.4g}" for r in rs)
    verdict("C11 sampled curves", monotone and dominates,
            f"uniform [{fmt(uni)}], biased [{fmt(bia)}] at sizes {list(sizes)}; "
            f"uniform monotone {monotone}, closer to 1 at every size {dominates}")
