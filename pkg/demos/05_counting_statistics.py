"""Counting statistics of clocks that do not reset.

A biased random walk register (forward rate 2, backward rate 1) is read
at the n-th tick of a Poisson reference. The current, variance rate and
precision follow from the first two count moments; fitting several n
gives the polynomial coefficients alpha.
"""
import argparse

import numpy as np

from ticktomo import simulator as sim
from ticktomo import tomography as tomo
from ticktomo.simulator import RateMatrixClock, TickSample


def describe(name, clock, gamma, n_ref, M, seed):
    s = sim.sample_nonreset_counts(clock, gamma, n_ref, M, seed)
    r = tomo.fcs_estimate(s)
    print(f"{name}: J = {r.J_inf:.4f} +- {r.J_se:.4f}, Sigma = {r.Sigma_inf:.4f} +- {r.Sigma_se:.4f}, "
          f"P = {r.precision:.4f} +- {r.precision_se:.4f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--M", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()

    walk = RateMatrixClock([[0.0]], forward=[[2.0]], backward=[[1.0]])
    describe("biased walk (J=1, Sigma=3)", walk, 3.0, 200, args.M, args.seed)
    erlang = RateMatrixClock([[0, 1.0], [0, 0]], forward=[[0, 0], [1.0, 0]])
    describe("Erlang(2) renewal (P=2)", erlang, 1.0, 200, args.M, args.seed)

    n_set = [50, 100, 150, 200]
    table = sim.sample_nonreset_table(walk, 3.0, n_set, args.M, args.seed)
    m = {n: [np.mean(table[:, i]), np.mean(table[:, i].astype(float) ** 2)] for i, n in enumerate(n_set)}
    fit = tomo.fit_alpha_coefficients(m, 3.0, 2)
    for j, a in fit.alpha.items():
        print(f"alpha^({j}) = {np.round(a, 4)}   residual {fit.residuals[j]:.1e}")
    print(f"current from alpha: {fit.current:.4f}, variance rate from alpha: {fit.variance_rate:.4f}")

    b = tomo.fcs_error_bound(args.M * 200 * 1.0 / 3.0, 0.05, 1.0, 3.0, 3.0, 200)
    print(f"Pr(fractional error of J >= 5%) <= {b:.4f}")


if __name__ == "__main__":
    main()
