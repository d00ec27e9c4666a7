"""Small statistical helpers shared by the experiments and the test-suite."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Iterable

import numpy as np
from scipy import stats as st


@dataclass
class Moments:
    """Mergeable count/mean/M2 accumulator (Chan et al. pairwise update)."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def push_many(self, xs) -> "Moments":
        xs = np.asarray(xs, dtype=float)
        if xs.size:
            other = Moments(xs.size, float(xs.mean()), float(((xs - xs.mean()) ** 2).sum()))
            self.merge(other)
        return self

    def merge(self, o: "Moments") -> "Moments":
        if o.n == 0:
            return self
        n = self.n + o.n
        delta = o.mean - self.mean
        self.mean += delta * o.n / n
        self.m2 += o.m2 + delta * delta * self.n * o.n / n
        self.n = n
        return self

    @property
    def var(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else float("nan")

    @property
    def se(self) -> float:
        return math.sqrt(self.var / self.n) if self.n > 1 else float("nan")


def mean_se(xs) -> tuple[float, float]:
    m = Moments().push_many(xs)
    return m.mean, m.se


@dataclass(frozen=True)
class ChiSquare:
    statistic: float
    dof: int
    pvalue: float
    bins: int


def chi_square_two_sample(a: Iterable[Hashable], b: Iterable[Hashable],
                          min_expected: float = 5.0) -> ChiSquare:
    """Homogeneity test of two categorical samples; sparse cells are pooled."""
    ca, cb = Counter(a), Counter(b)
    na, nb = sum(ca.values()), sum(cb.values())
    keys = sorted(set(ca) | set(cb), key=lambda k: -(ca[k] + cb[k]))
    frac_a = na / (na + nb)
    rows_a, rows_b = [], []
    pool_a = pool_b = 0
    for k in keys:
        tot = ca[k] + cb[k]
        if min(tot * frac_a, tot * (1 - frac_a)) >= min_expected:
            rows_a.append(ca[k])
            rows_b.append(cb[k])
        else:
            pool_a += ca[k]
            pool_b += cb[k]
    if pool_a + pool_b:
        rows_a.append(pool_a)
        rows_b.append(pool_b)
    if len(rows_a) < 2:
        return ChiSquare(0.0, 0, 1.0, len(rows_a))
    table = np.array([rows_a, rows_b], dtype=float)
    chi2, p, dof, _ = st.chi2_contingency(table, correction=False)
    return ChiSquare(float(chi2), int(dof), float(p), len(rows_a))


def ks_distance(a, b) -> float:
    return float(st.ks_2samp(np.asarray(a), np.asarray(b)).statistic)


def ks_threshold(n: int, m: int, alpha: float) -> float:
    """Asymptotic two-sample Kolmogorov-Smirnov critical distance at level alpha."""
    c = math.sqrt(-math.log(alpha / 2.0) / 2.0)
    return c * math.sqrt((n + m) / (n * m))


def survival(samples, grid) -> np.ndarray:
    s = np.sort(np.asarray(samples, dtype=float))
    return 1.0 - np.searchsorted(s, np.asarray(grid, dtype=float), side="right") / len(s)


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def empirical(keys: Iterable[Hashable]) -> dict:
    c = Counter(keys)
    n = sum(c.values())
    return {k: v / n for k, v in c.items()}
