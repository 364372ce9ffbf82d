"""Separation on a two-marginal workload and generalisation on a sampled one.

    python3 demos/scaling_demo.py
"""
import time

from matmech import (design_generalized, design_separated, generalize, run_lsa,
                     sample_range_workload, separate, total_error)
from matmech.workload import marginal_range_workload


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def main():
    W = marginal_range_workload((16, 16))
    joint, tj = timed(lambda: run_lsa(W))
    sep, ts = timed(lambda: design_separated(separate(W)))
    print(f"two marginals over 16x16: joint LSA {total_error(W, joint.strategy):.6g} in {tj:.3f}s, "
          f"separated {sep.error:.6g} in {ts:.3f}s (q0 share {sep.q0_fraction:.2g})")

    W = sample_range_workload((256,), 1000, "biased", seed=7)
    plain, tp = timed(lambda: run_lsa(W))
    gen, tg = timed(lambda: design_generalized(generalize(W, m=8)))
    print(f"1000 biased ranges over 256 cells: plain LSA {total_error(W, plain.strategy):.6g} in {tp:.2f}s, "
          f"generalised {total_error(W, gen.strategy):.6g} in {tg:.2f}s")


if __name__ == "__main__":
    main()
