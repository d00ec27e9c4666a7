"""Laplace transform and mean of the first emergence time on B(a, b) chains:
corrected and printed series, quadrature, and Monte Carlo side by side."""
import argparse
import math

import numpy as np

from mutforest.emergence import (binary_fission_chain, expected_tau, laplace_tau,
                                 sample_tau_representation)
from mutforest.stats import Moments


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--pairs", default="1,1;1,2;2,0.5")
    p.add_argument("--alphas", default="0,0.5,1,2")
    p.add_argument("--reps", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    alphas = [float(v) for v in a.alphas.split(",")]
    for chunk in a.pairs.split(";"):
        s, b = (float(v) for v in chunk.split(","))
        m = binary_fission_chain([(s, b)])
        tau = sample_tau_representation(m, 1, a.reps, a.seed).values
        e = expected_tau(m, 1)
        mc = Moments().push_many(tau)
        print(f"B({s:g},{b:g}): E tau MC {mc.mean:.5f} +- {mc.se:.5f} | quadrature "
              f"{e.quadrature:.10f} | ln(lam/b)/a {e.frullani:.10f} | ln(lam/b)/(ab) {e.stated:.10f}")
        for al in alphas:
            lap = Moments().push_many(np.exp(-al * tau))
            c = laplace_tau(m, 1, al).value
            pr = laplace_tau(m, 1, al, form="printed").value
            print(f"   alpha={al:<4g} MC {lap.mean:.5f} +- {lap.se:.5f}  corrected {c:.6f}  "
                  f"printed {pr:.6f}")
        if s == b:
            print(f"   (alpha=1 corrected closed form pi/2-1 = {math.pi / 2 - 1:.6f})")


if __name__ == "__main__":
    main()
