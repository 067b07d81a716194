"""When the reference is only known to be sub-Poissonian.

The count moments are then confined to an interval around gamma^k M_k
that narrows as the reference gets faster.
"""
import math

from ticktomo import combinatorics as comb
from ticktomo import tomography as tomo


def main():
    nu = 1.0
    M = [1.0] + [math.factorial(k) / nu**k for k in range(1, 7)]
    for gamma in (1.0, 10.0, 1e4):
        print(f"gamma = {gamma:g}")
        m = comb.forward_stirling_transform(M[1:], gamma)
        for k in range(1, 7):
            lo, up = tomo.sub_poisson_relative_moment_bounds(M, gamma, k)
            print(f"  k={k}: {lo:12.5g} <= m_k (Poisson {m[k - 1]:12.5g}) <= {up:12.5g}   ratio {up / lo:.4f}")
    print("\nraw-moment bounds for mean mu=2:")
    for k in range(1, 6):
        lo, up = tomo.sub_poisson_bounds(2.0, k)
        print(f"  k={k}: [{lo:.4g}, {up:.4g}]")


if __name__ == "__main__":
    main()
