"""Error ratios of the stock strategies, and of LSA, on all-range workloads.

    python3 demos/ratio_table.py [--n 256]
"""
import argparse

from matmech import build_all_range, error_ratio, run_lsa, svd_bound
from matmech.strategy import hierarchical_strategy, identity_strategy, wavelet_strategy


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=256, help="domain size (a power of two)")
    n = ap.parse_args().n
    W = build_all_range((n,))
    print(f"AllRange({n}): {W.m} queries, singular value bound {svd_bound(W):.6g}")
    strategies = {"identity": identity_strategy(n), "hierarchical": hierarchical_strategy(n),
                  "wavelet": wavelet_strategy(n)}
    res = run_lsa(W)
    strategies[f"lsa ({len(res.levels)} levels)"] = res.strategy
    for name, A in strategies.items():
        print(f"  {name:<22} ratio {error_ratio(W, A):8.4f}")


if __name__ == "__main__":
    main()
