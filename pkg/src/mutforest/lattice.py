"""Finite-support lattice laws on Z_+^d, their convolutions and mean-matrix data."""
from __future__ import annotations

import json

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

MASS_TOL = 1e-12
PARSE_MASS_TOL = 1e-9
CRITICAL_TOL = 1e-9
EXACT_SUPPORT_LIMIT = 10_000

Vector = tuple[int, ...]


class LawError(ValueError):
    """Invalid progeny law or lattice pmf."""


class ConvergenceError(RuntimeError):
    """Dominant eigenpair iteration failed to converge."""


def unit(d: int, i: int) -> Vector:
    v = [0] * d
    v[i] = 1
    return tuple(v)


def _add(a: Vector, b: Vector) -> Vector:
    return tuple(x + y for x, y in zip(a, b))


@dataclass(frozen=True)
class SparsePmf:
    """Probability mass function on Z_+^d with finite support.

    ``entries`` maps coordinate tuples to probabilities; zero entries are
    dropped at construction. Values may be floats or ``Fraction`` (exact mode).
    """

    dim: int
    entries: Mapping[Vector, float] = field(default_factory=dict)
    check_mass: bool = True

    def __post_init__(self):
        if self.dim < 1:
            raise LawError("dimension must be >= 1")
        clean = {}
        for k, p in self.entries.items():
            k = tuple(int(c) for c in k)
            if len(k) != self.dim:
                raise LawError(f"vector {k} has length {len(k)}, expected {self.dim}")
            if any(c < 0 for c in k):
                raise LawError(f"negative coordinate in {k}")
            if p < 0:
                raise LawError(f"negative probability {p} at {k}")
            if p > 0:
                clean[k] = clean.get(k, 0) + p
        object.__setattr__(self, "entries", clean)
        if self.check_mass and abs(float(self.mass()) - 1.0) > MASS_TOL:
            raise LawError(f"total mass {float(self.mass())!r} differs from 1")

    @classmethod
    def delta(cls, k: Sequence[int], exact: bool = False) -> "SparsePmf":
        return cls(len(k), {tuple(k): Fraction(1) if exact else 1.0})

    @classmethod
    def sub(cls, dim: int, entries: Mapping[Vector, float]) -> "SparsePmf":
        """A sub-probability measure (mass check disabled)."""
        return cls(dim, entries, check_mass=False)

    @property
    def exact(self) -> bool:
        return any(isinstance(p, Fraction) for p in self.entries.values())

    def __call__(self, k: Sequence[int]) -> float:
        return self.entries.get(tuple(k), 0)

    def __len__(self) -> int:
        return len(self.entries)

    def support(self) -> list[Vector]:
        return sorted(self.entries)

    def mass(self):
        return sum(self.entries.values(), Fraction(0) if self.exact else 0.0)

    def mean(self) -> np.ndarray:
        m = np.zeros(self.dim)
        for k, p in self.entries.items():
            m += float(p) * np.asarray(k, dtype=float)
        return m

    def to_float(self) -> "SparsePmf":
        return SparsePmf(self.dim, {k: float(p) for k, p in self.entries.items()}, self.check_mass)

    def to_exact(self) -> "SparsePmf":
        if len(self) > EXACT_SUPPORT_LIMIT:
            raise LawError(f"exact mode limited to {EXACT_SUPPORT_LIMIT} support points")
        return SparsePmf(
            self.dim,
            {k: Fraction(p).limit_denominator(10**12) if not isinstance(p, Fraction) else p
             for k, p in self.entries.items()},
            self.check_mass,
        )

    def to_dense(self, shape: Sequence[int] | None = None) -> np.ndarray:
        if shape is None:
            shape = [max(k[j] for k in self.entries) + 1 for j in range(self.dim)]
        out = np.zeros(shape)
        for k, p in self.entries.items():
            out[k] += float(p)
        return out

    def marginal(self, j: int) -> dict[int, float]:
        out: dict[int, float] = {}
        for k, p in self.entries.items():
            out[k[j]] = out.get(k[j], 0) + p
        return out


@dataclass(frozen=True)
class SignedStepPmf:
    """Increment law of a walk that is downward skip free in coordinate ``center``."""

    dim: int
    center: int
    entries: Mapping[Vector, float]

    def __post_init__(self):
        for k in self.entries:
            if len(k) != self.dim:
                raise LawError(f"vector {k} has wrong length")
            for j, c in enumerate(k):
                if (j == self.center and c < -1) or (j != self.center and c < 0):
                    raise LawError(f"step {k} is not downward skip free at {self.center}")
        if abs(float(sum(self.entries.values())) - 1.0) > MASS_TOL:
            raise LawError("step law mass differs from 1")

    def __call__(self, k: Sequence[int]) -> float:
        return self.entries.get(tuple(k), 0)

    def mass(self) -> float:
        return float(sum(self.entries.values()))

    def mean(self) -> np.ndarray:
        m = np.zeros(self.dim)
        for k, p in self.entries.items():
            m += float(p) * np.asarray(k, dtype=float)
        return m

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Support as an (n, d) int array and matching probabilities."""
        keys = sorted(self.entries)
        return (np.array(keys, dtype=np.int64).reshape(len(keys), self.dim),
                np.array([float(self.entries[k]) for k in keys]))


@dataclass(frozen=True)
class ProgenyLaw:
    """Per-type offspring laws nu_1..nu_d, optionally with birth rates."""

    laws: tuple[SparsePmf, ...]
    rates: tuple[float, ...] | None = None

    def __post_init__(self):
        laws = tuple(self.laws)
        object.__setattr__(self, "laws", laws)
        if not laws:
            raise LawError("empty progeny law")
        d = laws[0].dim
        if len(laws) != d:
            raise LawError(f"{len(laws)} laws given for dimension {d}")
        if any(p.dim != d for p in laws):
            raise LawError("laws do not share a dimension")
        if self.rates is not None:
            rates = tuple(float(r) for r in self.rates)
            if len(rates) != d or any(not r > 0 for r in rates):
                raise LawError("rates must be d positive reals")
            object.__setattr__(self, "rates", rates)

    @property
    def dim(self) -> int:
        return len(self.laws)

    def __getitem__(self, i: int) -> SparsePmf:
        return self.laws[i]

    def with_rates(self, rates: Sequence[float]) -> "ProgenyLaw":
        return ProgenyLaw(self.laws, tuple(rates))

    def mean_matrix(self) -> np.ndarray:
        return np.vstack([p.mean() for p in self.laws])

    def non_singular(self) -> bool:
        return any(
            float(sum(p for k, p in law.entries.items() if sum(k) == 1)) < 1.0 - MASS_TOL
            for law in self.laws
        )

    def continuous_time_ready(self) -> bool:
        """True when nu_i(e_i) = 0 for every i."""
        return all(law(unit(self.dim, i)) == 0 for i, law in enumerate(self.laws))

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ProgenyLaw":
        d = int(doc["d"])
        laws = []
        for i, entry in enumerate(doc["laws"]):
            ent: dict[Vector, float] = {}
            for item in entry["entries"]:
                k = tuple(int(c) for c in item["k"])
                p = float(item["p"])
                if p < 0 or any(c < 0 for c in k):
                    raise LawError(f"law {i + 1}: negative entry {item}")
                ent[k] = ent.get(k, 0.0) + p
            total = sum(ent.values())
            if abs(total - 1.0) > PARSE_MASS_TOL:
                raise LawError(f"law {i + 1}: mass {total!r} differs from 1")
            # renormalise the sub-1e-9 parse slack so downstream invariants hold at 1e-12
            if abs(total - 1.0) > MASS_TOL:
                ent = {k: p / total for k, p in ent.items()}
            laws.append(SparsePmf(d, ent))
        rates = doc.get("rates")
        return cls(tuple(laws), tuple(rates) if rates is not None else None)

    def to_dict(self) -> dict:
        doc = {
            "d": self.dim,
            "laws": [
                {"entries": [{"k": list(k), "p": float(p)} for k, p in sorted(law.entries.items())]}
                for law in self.laws
            ],
        }
        if self.rates is not None:
            doc["rates"] = list(self.rates)
        return doc


def load_law(path: str | Path) -> ProgenyLaw:
    with open(path) as fh:
        return ProgenyLaw.from_dict(json.load(fh))


def convolve(p: SparsePmf, q: SparsePmf) -> SparsePmf:
    if p.dim != q.dim:
        raise LawError(f"dimension mismatch: {p.dim} vs {q.dim}")
    out: dict[Vector, float] = {}
    for a, pa in p.entries.items():
        for b, qb in q.entries.items():
            k = _add(a, b)
            out[k] = out.get(k, 0) + pa * qb
    return SparsePmf(p.dim, out, check_mass=p.check_mass and q.check_mass)


@dataclass(frozen=True)
class CappedPower:
    pmf: SparsePmf
    truncated_mass: float


def _cap(p: SparsePmf, cap: Sequence[int] | None) -> SparsePmf:
    if cap is None:
        return p
    return SparsePmf.sub(p.dim, {k: v for k, v in p.entries.items()
                                 if all(c <= m for c, m in zip(k, cap))})


def convolve_power(p: SparsePmf, n: int, cap: Sequence[int] | None = None) -> CappedPower:
    """n-fold convolution by binary exponentiation.

    With ``cap`` every intermediate result is restricted to k_j <= cap[j]; the
    mass lost to the cap is reported as ``truncated_mass``.
    """
    if n < 0:
        raise LawError("negative convolution power")
    result = SparsePmf.delta((0,) * p.dim, exact=p.exact)
    base = SparsePmf.sub(p.dim, p.entries)
    expected = p.mass() ** n
    while n:
        if n & 1:
            result = _cap(convolve(SparsePmf.sub(p.dim, result.entries), base), cap)
        n >>= 1
        if n:
            base = _cap(convolve(base, base), cap)
    lost = float(expected - result.mass())
    if cap is None:
        return CappedPower(SparsePmf(p.dim, result.entries, check_mass=p.check_mass), 0.0)
    return CappedPower(result, max(lost, 0.0))


def shifted_step_law(nu: ProgenyLaw, i: int) -> SignedStepPmf:
    """Step law of the type-i coding walk: k -> nu_i(k + e_i), i zero-based."""
    if not 0 <= i < nu.dim:
        raise IndexError(f"type index {i} outside [0, {nu.dim})")
    entries = {}
    for k, p in nu[i].entries.items():
        s = list(k)
        s[i] -= 1
        entries[tuple(s)] = p
    return SignedStepPmf(nu.dim, i, entries)


def support_digraph(matrix: np.ndarray) -> nx.DiGraph:
    g = nx.DiGraph()
    d = matrix.shape[0]
    g.add_nodes_from(range(d))
    g.add_edges_from((i, j) for i in range(d) for j in range(d) if matrix[i, j] > 0)
    return g


def classify_pattern(matrix: np.ndarray) -> tuple[bool, bool]:
    """(irreducible, primitive) from the zero pattern only."""
    g = support_digraph(matrix)
    if g.number_of_edges() == 0:
        # a 1x1 zero matrix is not irreducible in the Perron-Frobenius sense
        return False, False
    irreducible = nx.is_strongly_connected(g)
    primitive = irreducible and nx.is_aperiodic(g)
    return irreducible, primitive


def perron(matrix: np.ndarray, tol: float = 1e-13, max_iter: int = 200_000):
    """Dominant eigenvalue and positive right/left eigenvectors of a primitive matrix.

    Power iteration on M + I (same eigenvectors, strictly dominant root for
    primitive M), finished by a few steps of shifted inverse iteration.
    Vectors are normalised so that u.1 = 1 and u.v = 1.
    """
    m = np.asarray(matrix, dtype=float)
    d = m.shape[0]
    shifted = m + np.eye(d)

    def dominant(a: np.ndarray) -> tuple[float, np.ndarray]:
        x = np.full(d, 1.0 / d)
        lam = 0.0
        for it in range(max_iter):
            y = a @ x
            lam_new = y.sum() / x.sum()
            y /= y.sum()
            if np.max(np.abs(y - x)) < tol and abs(lam_new - lam) < tol:
                return lam_new, y
            x, lam = y, lam_new
            if it == 2000:
                break
        # polish with inverse iteration around the current estimate
        shift = lam + 1e-10
        for _ in range(100):
            try:
                y = np.linalg.solve(a - shift * np.eye(d), x)
            except np.linalg.LinAlgError:
                return lam, x
            y /= y.sum()
            if np.max(np.abs(y - x)) < tol:
                x = y
                lam = float((a @ x).sum() / x.sum())
                return lam, x
            x = y
        raise ConvergenceError("dominant eigenpair iteration did not converge")

    lam_r, u = dominant(shifted)
    _, v = dominant(shifted.T)
    rho = lam_r - 1.0
    u = u / u.sum()
    v = v / (u @ v)
    res_r = np.max(np.abs(m @ u - rho * u))
    res_l = np.max(np.abs(v @ m - rho * v))
    if res_r > 1e-10 or res_l > 1e-10 or np.any(u <= 0) or np.any(v <= 0):
        raise ConvergenceError(f"eigenpair residuals {res_r:.2e}, {res_l:.2e}")
    return rho, u, v


def criticality(rho: float, tol: float = CRITICAL_TOL) -> str:
    if abs(rho - 1.0) < tol:
        return "critical"
    return "subcritical" if rho < 1.0 else "supercritical"


@dataclass(frozen=True)
class MeanReport:
    mean_matrix: np.ndarray
    irreducible: bool
    primitive: bool
    spectral_radius: float
    criticality: str
    diag_subunit: tuple[bool, ...]
    non_singular: bool
    right_eigvec: np.ndarray | None = None
    left_eigvec: np.ndarray | None = None
    # x log x moments are finite for every finite-support law
    xlogx_ok: bool = True

    @property
    def dim(self) -> int:
        return self.mean_matrix.shape[0]


def spectral_radius(matrix: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))


def mean_report(nu: ProgenyLaw) -> MeanReport:
    m = nu.mean_matrix()
    irreducible, primitive = classify_pattern(m)
    u = v = None
    if primitive:
        rho, u, v = perron(m)
    else:
        rho = spectral_radius(m)
    return MeanReport(
        mean_matrix=m,
        irreducible=irreducible,
        primitive=primitive,
        spectral_radius=float(rho),
        criticality=criticality(rho),
        diag_subunit=tuple(bool(m[i, i] < 1) for i in range(nu.dim)),
        non_singular=nu.non_singular(),
        right_eigvec=u,
        left_eigvec=v,
    )


def condition_AB(nu: ProgenyLaw, i: int) -> str:
    """'A' if m_ii <= 1, 'B' if m_ii > 1 with no cross births, else 'neither'."""
    m = nu[i].mean()
    if m[i] <= 1.0:
        return "A"
    if all(m[j] == 0 for j in range(nu.dim) if j != i):
        return "B"
    return "neither"


def law_from_lists(*laws: Mapping[Vector, float], rates: Iterable[float] | None = None) -> ProgenyLaw:
    """Convenience constructor: ``law_from_lists({(0, 0): .5, ...}, {...})``."""
    d = len(next(iter(laws[0])))
    return ProgenyLaw(tuple(SparsePmf(d, dict(l)) for l in laws),
                      tuple(rates) if rates is not None else None)
