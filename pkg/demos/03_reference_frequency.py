"""How much does a faster reference help?

For an exponential target the variance of the first-moment estimate is
(1/N)(1/P + nu/gamma) in units of M_1^2. Raising gamma removes the second
term only, so the gain saturates at a factor of two. A perfect periodic
reference gives the floor directly.
"""
import argparse

import numpy as np

from ticktomo import simulator as sim
from ticktomo import tomography as tomo
from ticktomo.clock_models import Exponential


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--R", type=int, default=5000, help="replications")
    ap.add_argument("--N", type=int, default=100, help="target ticks per replication")
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()

    nu = 1.0
    model = Exponential(nu)
    M = [1.0, 2.0]
    print(f"{'gamma/nu':>9} {'N*Var (sim)':>12} {'N*Var (exact)':>14}")
    for ratio in (0.25, 0.5, 1, 2, 10, 100):
        g = ratio * nu
        s = sim.sample_reset_counts(model, g, args.R * args.N, args.seed)
        est = s.counts.reshape(args.R, args.N).mean(axis=1) / g
        exact = tomo.estimator_variance_exact(M, g, args.N, 1)
        print(f"{ratio:>9g} {args.N * est.var(ddof=1):>12.4f} {args.N * exact:>14.4f}")

    tau = 1e-3 / nu
    s = sim.sample_perfect_reference_counts(model, tau, args.R * args.N, args.seed)
    est = s.counts.reshape(args.R, args.N).mean(axis=1) * tau
    print(f"{'perfect':>9} {args.N * np.var(est, ddof=1):>12.4f} {1.0:>14.4f}")


if __name__ == "__main__":
    main()
