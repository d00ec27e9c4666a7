"""Discrete multitype branching forests: a forest engine, a coding-walk engine
and the direction-asymptotics experiment."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from . import rng as rngmod
from .forest import MutationCensus, TypedForest
from .lattice import ProgenyLaw, mean_report
from .stats import Moments

DEFAULT_BUDGET = 10_000_000


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class LawTables:
    """Dense per-type support and cumulative probabilities for the kernels."""

    supp: np.ndarray  # (d, K, d) child vectors
    cum: np.ndarray  # (d, K)
    nsupp: np.ndarray  # (d,)

    @classmethod
    def of(cls, nu: ProgenyLaw) -> "LawTables":
        d = nu.dim
        kmax = max(len(l) for l in nu.laws)
        supp = np.zeros((d, kmax, d), dtype=np.int64)
        cum = np.ones((d, kmax))
        nsupp = np.zeros(d, dtype=np.int64)
        for i, law in enumerate(nu.laws):
            keys = sorted(law.entries)
            ps = np.array([float(law.entries[k]) for k in keys])
            supp[i, :len(keys)] = np.array(keys, dtype=np.int64)
            c = np.cumsum(ps)
            c[-1] = 1.0
            cum[i, :len(keys)] = c
            nsupp[i] = len(keys)
        return cls(supp, cum, nsupp)


@dataclass(frozen=True)
class SampleConfig:
    law: ProgenyLaw
    x: tuple[int, ...]
    vertex_budget: int = DEFAULT_BUDGET
    replicates: int = 1
    seed: int = 0

    def __post_init__(self):
        x = tuple(int(v) for v in self.x)
        object.__setattr__(self, "x", x)
        if len(x) != self.law.dim or any(v < 0 for v in x):
            raise ValueError("root vector must be d nonnegative integers")
        if not any(x):
            raise ValueError("root vector must be nonzero")
        if self.vertex_budget < sum(x):
            raise ValueError("vertex budget smaller than the number of roots")


@njit(cache=True)
def _draw(rng, cum, nsupp, i):
    u = rng.random()
    for c in range(nsupp[i] - 1):
        if u < cum[i, c]:
            return c
    return nsupp[i] - 1


@njit(cache=True)
def _forest_kernel(rng, x, supp, cum, nsupp, budget):
    d = x.shape[0]
    cap = 64
    types = np.empty(cap, np.int64)
    parent = np.empty(cap, np.int64)
    n = 0
    censored = False
    for t in range(d):
        for _ in range(x[t]):
            if n >= budget:
                censored = True
                break
            if n == cap:
                cap *= 2
                types = np.concatenate((types, np.empty(cap - n, np.int64)))
                parent = np.concatenate((parent, np.empty(cap - n, np.int64)))
            types[n] = t
            parent[n] = -1
            head = n
            n += 1
            while head < n and not censored:
                v = head
                head += 1
                i = types[v]
                c = _draw(rng, cum, nsupp, i)
                for ct in range(d):
                    for _k in range(supp[i, c, ct]):
                        if n >= budget:
                            censored = True
                            break
                        if n == cap:
                            cap *= 2
                            types = np.concatenate((types, np.empty(cap - n, np.int64)))
                            parent = np.concatenate((parent, np.empty(cap - n, np.int64)))
                        types[n] = ct
                        parent[n] = v
                        n += 1
                    if censored:
                        break
        if censored:
            break
    return types[:n].copy(), parent[:n].copy(), censored


@njit(cache=True)
def _census_arrays(types, parent, d):
    N = np.zeros(d, np.int64)
    Mm = np.zeros((d, d), np.int64)
    for v in range(types.shape[0]):
        N[types[v]] += 1
        p = parent[v]
        if p >= 0 and types[p] != types[v]:
            Mm[types[p], types[v]] += 1
    return N, Mm


@njit(cache=True)
def _forest_census_block(rng, x, supp, cum, nsupp, budget, reps):
    d = x.shape[0]
    N = np.zeros((reps, d), np.int64)
    Mm = np.zeros((reps, d, d), np.int64)
    cens = np.zeros(reps, np.bool_)
    for r in range(reps):
        types, parent, c = _forest_kernel(rng, x, supp, cum, nsupp, budget)
        n_r, m_r = _census_arrays(types, parent, d)
        N[r] = n_r
        Mm[r] = m_r
        cens[r] = c
    return N, Mm, cens


@njit(cache=True)
def _walk_kernel(rng, x, supp, cum, nsupp, budget):
    """Smallest solution of x_j + sum_i X^{ij}(N_i) = 0 by monotone relaxation.

    cur[i] holds X^{(i)}(N_i); walks only ever move forward so no history is kept.
    """
    d = x.shape[0]
    N = np.zeros(d, np.int64)
    cur = np.zeros((d, d), np.int64)
    total = 0
    changed = True
    while changed:
        changed = False
        for j in range(d):
            level = -x[j]
            for i in range(d):
                if i != j:
                    level -= cur[i, j]
            while cur[j, j] > level:
                if total >= budget:
                    return N, cur, True
                c = _draw(rng, cum, nsupp, j)
                for k in range(d):
                    cur[j, k] += supp[j, c, k]
                cur[j, j] -= 1
                N[j] += 1
                total += 1
                changed = True
    return N, cur, False


@njit(cache=True)
def _walk_census_block(rng, x, supp, cum, nsupp, budget, reps):
    d = x.shape[0]
    N = np.zeros((reps, d), np.int64)
    Mm = np.zeros((reps, d, d), np.int64)
    cens = np.zeros(reps, np.bool_)
    for r in range(reps):
        n_r, cur, c = _walk_kernel(rng, x, supp, cum, nsupp, budget)
        N[r] = n_r
        for i in range(d):
            for j in range(d):
                if i != j:
                    Mm[r, i, j] = cur[i, j]
        cens[r] = c
    return N, Mm, cens


def sample_forest(cfg: SampleConfig, rng: np.random.Generator) -> TypedForest:
    """One forest, generated tree by tree in breadth-first order.

    Vertex ids are the breadth-first labels; a forest that reaches the vertex
    budget is returned truncated with ``censored=True``.
    """
    t = LawTables.of(cfg.law)
    types, parent, censored = _forest_kernel(rng, np.asarray(cfg.x, np.int64),
                                             t.supp, t.cum, t.nsupp, cfg.vertex_budget)
    return TypedForest(cfg.law.dim, types, parent, censored=censored)


def sample_census_walk(cfg: SampleConfig, rng: np.random.Generator) -> MutationCensus:
    t = LawTables.of(cfg.law)
    N, cur, censored = _walk_kernel(rng, np.asarray(cfg.x, np.int64),
                                    t.supp, t.cum, t.nsupp, cfg.vertex_budget)
    Mm = cur.copy()
    np.fill_diagonal(Mm, 0)
    return MutationCensus(N, Mm.sum(axis=0), Mm, np.asarray(cfg.x, np.int64), censored)


@dataclass
class CensusBatch:
    """Censuses of many replicates: ``N`` (R, d), ``M_matrix`` (R, d, d)."""

    N: np.ndarray
    M_matrix: np.ndarray
    censored: np.ndarray

    @property
    def M(self) -> np.ndarray:
        return self.M_matrix.sum(axis=1)

    def __len__(self) -> int:
        return len(self.N)

    def keys(self, mask=None) -> list[tuple[int, ...]]:
        d = self.N.shape[1]
        off = [(i, j) for i in range(d) for j in range(d) if i != j]
        idx = np.arange(len(self)) if mask is None else np.flatnonzero(mask)
        cols = np.column_stack([self.N] + [self.M_matrix[:, i, j] for i, j in off])
        return [tuple(int(v) for v in cols[r]) for r in idx]


class _Block:
    """Picklable per-block worker."""

    def __init__(self, engine: str, nu: ProgenyLaw, x, budget: int):
        self.engine = engine
        self.tables = LawTables.of(nu)
        self.x = np.asarray(x, np.int64)
        self.budget = int(budget)

    def __call__(self, g, start, stop):
        t = self.tables
        kern = _walk_census_block if self.engine == "walk" else _forest_census_block
        return kern(g, self.x, t.supp, t.cum, t.nsupp, self.budget, stop - start)


@njit(cache=True)
def _cluster_children(types, parent, d, of_type):
    """Child vectors, in the forest of mutations, of every type-`of_type` cluster.

    Relies on parents preceding children (breadth-first ids).
    """
    n = types.shape[0]
    lab = np.empty(n, np.int64)
    ncl = 0
    for v in range(n):
        p = parent[v]
        if p < 0 or types[p] != types[v]:
            lab[v] = ncl
            ncl += 1
        else:
            lab[v] = lab[p]
    ctype = np.empty(ncl, np.int64)
    kids = np.zeros((ncl, d), np.int64)
    for v in range(n):
        p = parent[v]
        if p < 0 or types[p] != types[v]:
            ctype[lab[v]] = types[v]
            if p >= 0:
                kids[lab[p], types[v]] += 1
    m = 0
    for c in range(ncl):
        if ctype[c] == of_type:
            m += 1
    out = np.empty((m, d), np.int64)
    m = 0
    for c in range(ncl):
        if ctype[c] == of_type:
            out[m] = kids[c]
            m += 1
    return out


@njit(cache=True)
def _cluster_children_block(rng, x, supp, cum, nsupp, budget, reps, of_type):
    d = x.shape[0]
    parts = []
    n_cens = 0
    for r in range(reps):
        types, parent, c = _forest_kernel(rng, x, supp, cum, nsupp, budget)
        if c:
            n_cens += 1
            continue
        parts.append(_cluster_children(types, parent, d, of_type))
    total = 0
    for p in parts:
        total += p.shape[0]
    out = np.empty((total, d), np.int64)
    k = 0
    for p in parts:
        out[k:k + p.shape[0]] = p
        k += p.shape[0]
    return out, n_cens


class _ClusterBlock(_Block):
    def __init__(self, nu, x, budget, of_type):
        super().__init__("forest", nu, x, budget)
        self.of_type = int(of_type)

    def __call__(self, g, start, stop):
        t = self.tables
        return _cluster_children_block(g, self.x, t.supp, t.cum, t.nsupp, self.budget,
                                       stop - start, self.of_type)


def mutation_child_vectors(cfg: SampleConfig, i: int, workers: int = 1) -> tuple[np.ndarray, int]:
    """Child vectors of all type-i vertices in the forests of mutations of
    ``cfg.replicates`` sampled forests, and the number of censored forests skipped."""
    parts = rngmod.run_blocks(_ClusterBlock(cfg.law, cfg.x, cfg.vertex_budget, i),
                              cfg.replicates, cfg.seed, "mutation-children", workers)
    return (np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, cfg.law.dim), np.int64),
            int(sum(p[1] for p in parts)))


def sample_censuses(cfg: SampleConfig, engine: str = "walk", workers: int = 1) -> CensusBatch:
    """``cfg.replicates`` independent censuses from the chosen engine."""
    if engine not in ("walk", "forest"):
        raise ValueError(f"unknown engine {engine!r}")
    parts = rngmod.run_blocks(_Block(engine, cfg.law, cfg.x, cfg.vertex_budget),
                              cfg.replicates, cfg.seed, f"discrete-{engine}", workers)
    d = cfg.law.dim
    if not parts:
        return CensusBatch(np.zeros((0, d), np.int64), np.zeros((0, d, d), np.int64),
                           np.zeros(0, bool))
    return CensusBatch(np.concatenate([p[0] for p in parts]),
                       np.concatenate([p[1] for p in parts]),
                       np.concatenate([p[2] for p in parts]))


def expected_total(nu: ProgenyLaw, x: Sequence[float]) -> np.ndarray:
    """E N = x (I - M)^{-1} for a subcritical law."""
    m = nu.mean_matrix()
    return np.asarray(x, float) @ np.linalg.inv(np.eye(nu.dim) - m)


def extinction_probability(nu: ProgenyLaw, tol: float = 1e-14, max_iter: int = 1_000_000,
                           damping: float = 0.0) -> np.ndarray:
    """Smallest fixed point q = f(q) of the offspring generating system.

    Iterating from q = 0 increases monotonically to the smallest fixed point;
    ``damping`` in [0, 1) mixes in the previous iterate.
    """
    d = nu.dim
    tabs = [(np.array(list(l.entries), dtype=float), np.array([float(p) for p in l.entries.values()]))
            for l in nu.laws]
    q = np.zeros(d)
    for _ in range(max_iter):
        new = np.array([np.sum(p * np.prod(q ** k, axis=1)) for k, p in tabs])
        new = damping * q + (1 - damping) * new
        if np.max(np.abs(new - q)) < tol:
            return new
        q = new
    raise ExperimentError("generating-system iteration did not converge")


@dataclass
class ScaleEstimate:
    scale: int
    type: int
    quantity: str
    estimate: float
    se: float
    replicates: int
    censored: int
    target: float | None = None
    alt_target: float | None = None


@dataclass
class DirectionExperiment:
    direction: tuple[int, ...]
    scales: tuple[int, ...]
    criticality: str
    rows: list[ScaleEstimate] = field(default_factory=list)

    def get(self, scale: int, type_: int, quantity: str) -> ScaleEstimate:
        for r in self.rows:
            if r.scale == scale and r.type == type_ and r.quantity == quantity:
                return r
        raise KeyError((scale, type_, quantity))


def direction_targets(nu: ProgenyLaw, w: Sequence[int]) -> dict[str, np.ndarray]:
    """Limits of N_i(nw)/n and M_i(nw)/n for a subcritical law.

    ``M_over_n`` uses M_i = -x_i - X^{ii}(N_i), i.e. (1 - m_ii) c_i(w) - w_i;
    ``M_over_n_plus`` is the same expression with +w_i.
    """
    m = nu.mean_matrix()
    w = np.asarray(w, float)
    c = w @ np.linalg.inv(np.eye(nu.dim) - m)
    diag = np.diag(m)
    return {"c": c, "M_over_n": (1 - diag) * c - w, "M_over_n_plus": (1 - diag) * c + w}


def direction_asymptotics(nu: ProgenyLaw, w: Sequence[int], scales: Sequence[int], R: int,
                          seed: int = 0, budget: int = DEFAULT_BUDGET, workers: int = 1,
                          max_censored: float = 1e-3) -> DirectionExperiment:
    rep = mean_report(nu)
    if not rep.primitive:
        raise ExperimentError("direction asymptotics needs a primitive law")
    if rep.criticality == "supercritical":
        raise ExperimentError("supercritical law rejected")
    w = tuple(int(v) for v in w)
    if any(v < 0 for v in w) or not any(w):
        raise ValueError("direction must be a nonzero vector in Z_+^d")
    scales = tuple(sorted(int(s) for s in scales))
    exp = DirectionExperiment(w, scales, rep.criticality)
    targets = direction_targets(nu, w) if rep.criticality == "subcritical" else None
    diag = np.diag(rep.mean_matrix)
    for n in scales:
        x = tuple(n * v for v in w)
        batch = sample_censuses(SampleConfig(nu, x, budget, R, seed + n), "walk", workers)
        ok = ~batch.censored
        n_cens = int(batch.censored.sum())
        if rep.criticality == "subcritical" and n_cens > max_censored * R:
            raise ExperimentError(f"censoring {n_cens}/{R} exceeds {max_censored:.1%} at n={n}")
        N, M = batch.N[ok], batch.M[ok]
        for i in range(nu.dim):
            if rep.criticality == "subcritical":
                for q, vals, tgt, alt in (
                        ("N/n", N[:, i] / n, targets["c"][i], None),
                        ("M/n", M[:, i] / n, targets["M_over_n"][i], targets["M_over_n_plus"][i])):
                    mom = Moments().push_many(vals)
                    exp.rows.append(ScaleEstimate(n, i, q, mom.mean, mom.se, mom.n, n_cens, tgt, alt))
            else:
                pos = N[:, i] > 0
                ratio = Moments().push_many(M[pos, i] / N[pos, i])
                exp.rows.append(ScaleEstimate(n, i, "M/N", ratio.mean, ratio.se, ratio.n,
                                              n_cens, 1.0 - diag[i]))
                growth = Moments().push_many(N[:, i] / n)
                exp.rows.append(ScaleEstimate(n, i, "N/n", growth.mean, growth.se,
                                              growth.n, n_cens))
    return exp
