"""Multitype branching forests, their forests of mutations, and emergence times."""
from .forest import TypedForest, census, encode, mutation_forest
from .lattice import ProgenyLaw, SignedStepPmf, SparsePmf, law_from_lists, load_law, mean_report
from .mutation_law import joint_mutation_pmf, mutation_law, mutation_progeny

__all__ = [
    "ProgenyLaw", "SignedStepPmf", "SparsePmf", "TypedForest", "census", "encode",
    "joint_mutation_pmf", "law_from_lists", "load_law", "mean_report", "mutation_forest",
    "mutation_law", "mutation_progeny",
]
