"""Counting reference ticks turns clock moments into Stirling mixtures.

A target clock with waiting-time moments M_k, watched against a Poisson
reference of rate gamma, produces counts with raw moments
m_k = sum_j S(k, j) gamma^j M_j. This demo builds the tables, checks the
exponential case against the geometric count law, and inverts the map.
"""
import argparse
import math

import numpy as np

from ticktomo import combinatorics as comb


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nu", type=float, default=1.0, help="target rate")
    ap.add_argument("--gamma", type=float, default=0.5, help="reference rate")
    ap.add_argument("--k-max", type=int, default=6)
    args = ap.parse_args()

    print("Stirling numbers of the second kind S(k, j):")
    for k in range(args.k_max + 1):
        print("  ", comb.stirling_table("second").row(k))

    M = [math.factorial(k) / args.nu**k for k in range(1, args.k_max + 1)]
    m = comb.forward_stirling_transform(M, args.gamma)

    # counts are geometric with q = gamma / (nu + gamma)
    q = args.gamma / (args.nu + args.gamma)
    n = np.arange(0, 2000, dtype=float)
    pmf = (1 - q) * q**n
    print(f"\nExponential target nu={args.nu}, Poisson reference gamma={args.gamma}")
    print(f"{'k':>2} {'m_k (transform)':>18} {'m_k (geometric)':>18} {'M_k recovered':>14} {'M_k':>10}")
    back = comb.inverse_stirling_transform(comb.forward_stirling_transform(M, args.gamma, exact=True), args.gamma)
    for k in range(1, args.k_max + 1):
        direct = float(np.sum(pmf * n**k))
        print(f"{k:>2} {m[k - 1]:>18.8g} {direct:>18.8g} {back[k - 1]:>14.8g} {M[k - 1]:>10.6g}")


if __name__ == "__main__":
    main()
