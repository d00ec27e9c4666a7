"""Ratio convergence tau_k / (theta_1 + ... + theta_k) along a ladder of B-chains
whose consecutive mutation-rate ratios shrink."""
import argparse

from mutforest.emergence import binary_fission_chain, ratio_convergence


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--second-rates", default="10,100,1000",
                   help="lambda_{1,2} per rung; lambda_{0,1} = 1 and self rates are 1")
    p.add_argument("--reps", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    rungs = [float(v) for v in a.second_rates.split(",")]
    rep = ratio_convergence([binary_fission_chain([(1, 1), (1, r)]) for r in rungs], 2,
                            a.reps, a.seed)
    print("ratio       P(|r-1|>0.1)  P(|r-1|>0.05)  P(one immigrant)  E tau     E sum theta")
    for r in rep.rungs:
        print(f"{r.ratios[0]:<10.4g}  {r.exceed[0.1]:<12.5f}  {r.exceed[0.05]:<13.5f}  "
              f"{r.single_birth[2]:<16.4f}  {r.mean_tau:.5f}   {r.mean_theta_sum:.5f}")
    print("monotone:", rep.monotone(0.1), " strictly decreasing:", rep.strictly_decreasing(0.1))


if __name__ == "__main__":
    main()
