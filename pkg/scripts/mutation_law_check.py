"""Compare the series mutation law with child vectors of simulated forests of
mutations, atom by atom, and report total variation."""
import argparse

from mutforest.models import load_model
from mutforest.mutation_law import mutation_law
from mutforest.sim_discrete import SampleConfig, mutation_child_vectors
from mutforest.stats import empirical, total_variation


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--model", default="diamond")
    p.add_argument("--x", default="1,0")
    p.add_argument("--reps", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--top", type=int, default=8)
    a = p.parse_args()
    nu = load_model(a.model)
    mu = mutation_law(nu, eps=1e-12)
    x = [int(v) for v in a.x.split(",")]
    for i in range(nu.dim):
        vecs, cens = mutation_child_vectors(SampleConfig(nu, x, replicates=a.reps, seed=a.seed), i)
        if not len(vecs):
            continue
        emp = empirical(map(tuple, vecs.tolist()))
        law = {k: float(v) for k, v in mu[i].entries.items()}
        print(f"type {i}: {len(vecs)} vertices, censored forests {cens}, "
              f"TV {total_variation(emp, law):.5f}, truncation {mu.types[i].truncation_error:.1e}")
        for k in sorted(law, key=law.get, reverse=True)[:a.top]:
            print(f"   {k}: series {law[k]:.6f}  empirical {emp.get(k, 0.0):.6f}")


if __name__ == "__main__":
    main()
