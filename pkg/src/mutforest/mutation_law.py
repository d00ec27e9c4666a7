"""Progeny law of the forest of mutations and the joint law of mutation counts."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .lattice import (
    LawError,
    MeanReport,
    ProgenyLaw,
    SparsePmf,
    classify_pattern,
    condition_AB,
    convolve_power,
    criticality,
    perron,
    spectral_radius,
)

DEFAULT_MAX_TERMS = 20_000


def step_marginal(nu: ProgenyLaw, i: int) -> np.ndarray:
    """Law of the i-th coordinate of a type-i walk step, indexed from -1."""
    top = max(k[i] for k in nu[i].entries)
    out = np.zeros(top + 1)
    for k, p in nu[i].entries.items():
        out[k[i]] += float(p)
    return out


def kemperman_masses(nu: ProgenyLaw, i: int, n_max: int) -> np.ndarray:
    """First-passage masses P(tau_1 = n), n = 1..n_max, from the ballot identity.

    P(tau_1 = n) = P(X_n = -1) / n, where X is the type-i coordinate of the
    type-i walk. Returned array is 1-based: ``out[n - 1]``.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    step = step_marginal(nu, i)  # entry c is P(step = c - 1)
    out = np.zeros(n_max)
    # dist[c] = P(raw sum of n steps = c); walk value is c - n
    dist = np.array([1.0])
    for n in range(1, n_max + 1):
        dist = np.convolve(dist, step)
        # only raw values <= n_max - 1 can still matter for later terms
        if len(dist) > n_max:
            dist = dist[:n_max]
        out[n - 1] = dist[n - 1] / n if n - 1 < len(dist) else 0.0
    return out


def kemperman_mass(nu: ProgenyLaw, i: int, n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    return float(kemperman_masses(nu, i, n)[n - 1])


def kemperman_mass_exact(nu: ProgenyLaw, i: int, n: int) -> Fraction:
    marg = {}
    for k, p in nu[i].to_exact().entries.items():
        marg[k[i]] = marg.get(k[i], 0) + p
    dist = {0: Fraction(1)}
    for _ in range(n):
        new: dict[int, Fraction] = {}
        for a, pa in dist.items():
            for b, pb in marg.items():
                new[a + b] = new.get(a + b, 0) + pa * pb
        dist = new
    return dist.get(n - 1, Fraction(0)) / n


@dataclass(frozen=True)
class TypeMutationLaw:
    pmf: SparsePmf
    mode: str  # "series" or "dirac"
    truncation_error: float = 0.0
    support_error: float = 0.0
    terms: int = 0
    converged: bool = True


@dataclass(frozen=True)
class MutationLaw:
    dim: int
    types: tuple[TypeMutationLaw, ...]

    def __getitem__(self, i: int) -> SparsePmf:
        return self.types[i].pmf

    @property
    def truncation_error(self) -> tuple[float, ...]:
        return tuple(t.truncation_error for t in self.types)


def mutation_progeny(nu: ProgenyLaw, i: int, eps: float = 1e-10,
                     cap: Sequence[int] | None = None,
                     max_terms: int = DEFAULT_MAX_TERMS) -> TypeMutationLaw:
    """mu_i(k) = sum_n n^-1 nu_i^{*n}(k + (n-1) e_i) on {k : k_i = 0}.

    Terms are added until the accumulated first-passage mass reaches 1 - eps.
    ``truncation_error`` is the first-passage mass not reached; ``support_error``
    the mass of reached terms falling outside ``cap`` (cap[j] bounds k_j).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = nu.dim
    cond = condition_AB(nu, i)
    if cond == "B":
        return TypeMutationLaw(SparsePmf.delta((0,) * d), "dirac")
    if cond == "neither":
        raise LawError(
            f"type {i}: m_ii > 1 with cross-type births, clusters give birth to "
            "infinitely many children with positive probability")

    kemp = kemperman_masses(nu, i, min(max_terms, 64))
    while True:
        acc = np.cumsum(kemp)
        hit = np.flatnonzero(acc >= 1.0 - eps)
        if hit.size or len(kemp) >= max_terms:
            break
        kemp = kemperman_masses(nu, i, min(max_terms, 4 * len(kemp)))
    n_terms = int(hit[0]) + 1 if hit.size else len(kemp)
    reached = float(np.sum(kemp[:n_terms]))

    law = nu[i]
    supp = np.array(list(law.entries), dtype=np.int64).reshape(len(law), d)
    prob = np.array([float(p) for p in law.entries.values()])
    kmax = supp.max(axis=0)
    shape = []
    for j in range(d):
        if j == i:
            shape.append(n_terms)  # raw i-coordinate n-1 is the largest needed
        else:
            full = n_terms * int(kmax[j]) + 1
            shape.append(full if cap is None else min(full, int(cap[j]) + 1))
    shape = tuple(shape)
    power = np.zeros(shape)
    power[(0,) * d] = 1.0
    mu = np.zeros(tuple(1 if j == i else shape[j] for j in range(d)))
    for n in range(1, n_terms + 1):
        nxt = np.zeros(shape)
        for k, p in zip(supp, prob):
            src = tuple(slice(0, max(shape[j] - k[j], 0)) for j in range(d))
            dst = tuple(slice(k[j], shape[j]) for j in range(d))
            nxt[dst] += p * power[src]
        power = nxt
        sl = [slice(None)] * d
        sl[i] = slice(n - 1, n)
        mu += power[tuple(sl)] / n
    entries = {tuple(int(c) for c in idx): float(mu[idx])
               for idx in zip(*np.nonzero(mu)) if mu[idx] > 0}
    pmf = SparsePmf.sub(d, entries)
    support_error = max(reached - float(pmf.mass()), 0.0) if cap is not None else 0.0
    trunc = max(1.0 - reached, 0.0)
    return TypeMutationLaw(pmf, "series", trunc, support_error, n_terms, trunc <= eps)


def mutation_progeny_exact(nu: ProgenyLaw, i: int, n_terms: int) -> SparsePmf:
    """Exact rational partial sum of the series up to ``n_terms`` terms."""
    law = nu[i].to_exact()
    d = nu.dim
    out: dict[tuple[int, ...], Fraction] = {}
    for n in range(1, n_terms + 1):
        pw = convolve_power(law, n).pmf
        for k, p in pw.entries.items():
            if k[i] == n - 1:
                key = tuple(0 if j == i else c for j, c in enumerate(k))
                out[key] = out.get(key, Fraction(0)) + p / n
    return SparsePmf.sub(d, out)


def mutation_law(nu: ProgenyLaw, eps: float = 1e-10, cap: Sequence[int] | None = None,
                 max_terms: int = DEFAULT_MAX_TERMS) -> MutationLaw:
    return MutationLaw(nu.dim, tuple(mutation_progeny(nu, i, eps, cap, max_terms)
                                     for i in range(nu.dim)))


@dataclass(frozen=True)
class MutationMeanReport:
    """Mean matrix of the mutation law; ``infinite`` tags entries with no finite mean."""

    matrix: np.ndarray
    infinite: np.ndarray
    irreducible: bool
    primitive: bool
    moment_order: tuple[float, ...]
    spectral_radius: float | None = None
    criticality: str | None = None
    right_eigvec: np.ndarray | None = None
    left_eigvec: np.ndarray | None = None

    @property
    def all_finite(self) -> bool:
        return not self.infinite.any()


def mutation_mean_report(r: MeanReport) -> MutationMeanReport:
    m = r.mean_matrix
    d = r.dim
    mbar = np.zeros((d, d))
    inf = np.zeros((d, d), dtype=bool)
    order = []
    for i in range(d):
        cross = [j for j in range(d) if j != i and m[i, j] > 0]
        if not cross:
            order.append(float("inf"))
            continue
        if m[i, i] < 1:
            order.append(float("inf"))
            for j in cross:
                mbar[i, j] = m[i, j] / (1.0 - m[i, i])
        else:
            order.append(0.0)
            inf[i, cross] = True
    pattern = mbar + inf
    irreducible, primitive = classify_pattern(pattern)
    rho = crit = u = v = None
    if not inf.any():
        if primitive:
            rho, u, v = perron(mbar)
        else:
            rho = spectral_radius(mbar)
        crit = criticality(rho)
    return MutationMeanReport(mbar, inf, irreducible, primitive, tuple(order),
                              rho, crit, u, v)


def mean_identity_residual(r: MeanReport, rbar: MutationMeanReport) -> float:
    """max |M - ((I - diag m_ii) Mbar + diag m_ii)| over finite entries."""
    m = r.mean_matrix
    dm = np.diag(np.diag(m))
    recon = (np.eye(r.dim) - dm) @ rbar.matrix + dm
    mask = ~rbar.infinite
    return float(np.max(np.abs(m - recon)[mask])) if mask.any() else 0.0


def bareiss_det(a: Sequence[Sequence[int]]) -> int:
    """Fraction-free integer determinant."""
    m = [list(map(int, row)) for row in a]
    n = len(m)
    if n == 0:
        return 1
    sign, prev = 1, 1
    for k in range(n - 1):
        if m[k][k] == 0:
            for r in range(k + 1, n):
                if m[r][k] != 0:
                    m[k], m[r] = m[r], m[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) // prev
        prev = m[k][k]
    return sign * m[n - 1][n - 1]


class InconsistentQuery(ValueError):
    pass


@dataclass(frozen=True)
class JointMutationQuery:
    """Event {M_i = n_i - x_i, M_ij = k_ij}; ``k`` is d x d, diagonal ignored."""

    x: tuple[int, ...]
    n: tuple[int, ...]
    k: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        d = len(self.x)
        object.__setattr__(self, "x", tuple(int(v) for v in self.x))
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))
        object.__setattr__(self, "k", tuple(tuple(int(v) for v in row) for row in self.k))
        if len(self.n) != d or len(self.k) != d or any(len(r) != d for r in self.k):
            raise InconsistentQuery("shape mismatch")
        if any(v < 0 for v in self.x):
            raise InconsistentQuery("x must be nonnegative")
        for i in range(d):
            for j in range(d):
                if i != j and self.k[i][j] < 0:
                    raise InconsistentQuery(f"k_{i + 1}{j + 1} < 0")
        for j in range(d):
            rhs = self.x[j] + sum(self.k[i][j] for i in range(d) if i != j)
            if self.n[j] != rhs:
                raise InconsistentQuery(
                    f"n_{j + 1} = x_{j + 1} + sum_i k_i{j + 1} violated: {self.n[j]} != {rhs}")

    @classmethod
    def from_cross(cls, x: Sequence[int], k: Sequence[Sequence[int]]) -> "JointMutationQuery":
        d = len(x)
        n = tuple(x[j] + sum(k[i][j] for i in range(d) if i != j) for j in range(d))
        return cls(tuple(x), n, tuple(tuple(r) for r in k))


def k_matrix(q: JointMutationQuery) -> list[list[int]]:
    d = len(q.x)
    keep = [i for i in range(d) if q.n[i] > 0]
    return [[q.n[i] if i == j else -q.k[i][j] for j in keep] for i in keep]


def joint_mutation_pmf(mu: MutationLaw, q: JointMutationQuery) -> float:
    d = mu.dim
    det = bareiss_det(k_matrix(q))
    denom = 1
    for i in range(d):
        denom *= max(q.n[i], 1)
    prob = det / denom
    if prob == 0:
        return 0.0
    for i in range(d):
        row = tuple(0 if j == i else q.k[i][j] for j in range(d))
        if q.n[i] == 0:
            if any(row):
                return 0.0
            continue
        prob *= float(_power_at(mu[i], q.n[i], row))
    return float(prob)




def _power_at(p: SparsePmf, n: int, k: tuple[int, ...]) -> float:
    cap = k
    return convolve_power(SparsePmf.sub(p.dim, p.entries), n, cap=cap).pmf(k)


def consistent_queries(x: Sequence[int], total: int):
    """Every consistent query with sum_i n_i <= total."""
    d = len(x)
    pairs = [(i, j) for i in range(d) for j in range(d) if i != j]
    budget = total - sum(x)

    def rec(idx, remaining, ks):
        if idx == len(pairs):
            k = [[0] * d for _ in range(d)]
            for (i, j), v in zip(pairs, ks):
                k[i][j] = v
            yield JointMutationQuery.from_cross(x, k)
            return
        for v in range(remaining + 1):
            yield from rec(idx + 1, remaining - v, ks + [v])

    if budget < 0:
        return
    yield from rec(0, budget, [])


@dataclass(frozen=True)
class EigenRelation:
    critical: bool
    u_residual: float
    v_residual: float
    holds: bool
    details: dict = field(default_factory=dict)


def eigen_relation_check(r: MeanReport, rbar: MutationMeanReport,
                         tol: float = 1e-8) -> EigenRelation:
    """Check u_bar = u and v_bar proportional to v (I - diag m_ii).

    Both identities follow from M = (I - D) Mbar + D only at the eigenvalue 1,
    so they are expected to hold for critical laws and generally fail otherwise.
    """
    if not (r.primitive and rbar.primitive and rbar.right_eigvec is not None):
        raise ValueError("both mean matrices must be primitive with finite entries")
    u, v = r.right_eigvec, r.left_eigvec
    ub, vb = rbar.right_eigvec, rbar.left_eigvec
    target = v * (1.0 - np.diag(r.mean_matrix))
    target = target / target.sum()
    ur = float(np.max(np.abs(u - ub)))
    vr = float(np.max(np.abs(vb / vb.sum() - target)))
    return EigenRelation(
        critical=r.criticality == "critical",
        u_residual=ur,
        v_residual=vr,
        holds=ur < tol and vr < tol,
        details={"rho": r.spectral_radius, "rho_bar": rbar.spectral_radius},
    )
