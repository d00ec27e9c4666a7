"""Scale sweep of the direction-asymptotics experiment.

Prints, per scale n, the estimates of N_i/n and M_i/n (subcritical) or M_i/N_i
(critical) with standard errors and censoring counts, so the finite-n bias can
be read off as n grows.
"""
import argparse
import csv
import sys

from mutforest.models import load_model
from mutforest.sim_discrete import direction_asymptotics


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--model", default="diamond")
    p.add_argument("--direction", default="1,0")
    p.add_argument("--scales", default="25,50,100,200,400")
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--budget", type=int, default=10_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    a = p.parse_args()
    w = [int(v) for v in a.direction.split(",")]
    scales = [int(v) for v in a.scales.split(",")]
    exp = direction_asymptotics(load_model(a.model), w, scales, a.reps, a.seed, a.budget,
                                a.workers)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["scale", "type", "quantity", "estimate", "se", "censored", "target",
                  "z_score"])
    for r in exp.rows:
        z = "" if r.target is None else (r.estimate - r.target) / r.se
        out.writerow([r.scale, r.type, r.quantity, r.estimate, r.se, r.censored,
                      "" if r.target is None else r.target, z])


if __name__ == "__main__":
    main()
