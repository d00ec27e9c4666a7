"""Emergence times along non-reversible mutation chains 0 -> 1 -> ... -> d-1.

Types are zero-based throughout: ``tau[i]`` is the first time a type-i
individual exists, ``tau[start] = 0``, and the process starts from one
individual of type ``start`` (0 unless stated).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy import integrate

from . import rng as rngmod
from .lattice import LawError, ProgenyLaw, SparsePmf, unit
from .sim_continuous import DEFAULT_CAP, STOPPED, _ct_kernel
from .sim_discrete import LawTables
from .stats import Moments, survival

DELTAS = (0.1, 0.05)


class ChainError(LawError):
    """A chain-model clause is violated; the message names it."""


@dataclass(frozen=True)
class ChainModel:
    nu: ProgenyLaw
    rates: tuple[float, ...]
    single_mutant: bool
    lam_ij: np.ndarray
    binary_fission: bool

    @property
    def dim(self) -> int:
        return self.nu.dim

    def mutation_rate(self, i: int) -> float:
        """lambda_{i,i+1}."""
        return float(self.lam_ij[i, i + 1])

    def self_rate(self, i: int) -> float:
        """lambda_{i,i}."""
        return float(self.lam_ij[i, i])

    def rates_additive(self) -> bool:
        """lambda_i = lambda_{i,i} + lambda_{i,i+1} for every non-terminal type."""
        return all(math.isclose(self.rates[i], self.lam_ij[i, i] + self.lam_ij[i, i + 1],
                                rel_tol=1e-12, abs_tol=1e-15) for i in range(self.dim - 1))


def lambda_matrix(nu: ProgenyLaw, rates: Sequence[float]) -> np.ndarray:
    """lambda_{i,j} = lambda_i (1 - P(step j-coordinate is zero)) under the shifted law."""
    d = nu.dim
    out = np.zeros((d, d))
    for i in range(d):
        e = unit(d, i)
        for j in range(d):
            zero = sum(p for k, p in nu[i].entries.items() if k[j] - e[j] == 0)
            out[i, j] = rates[i] * (1.0 - zero)
    return out


def validate(nu: ProgenyLaw, rates: Sequence[float] | None = None,
             single_mutant: bool = False) -> ChainModel:
    """Check the chain clauses and return the model with its lambda_{i,j}.

    ``single_mutant`` additionally requires at most one type-(i+1) child per litter.
    """
    d = nu.dim
    rates = tuple(float(r) for r in (rates if rates is not None else nu.rates or ()))
    if len(rates) != d or any(r <= 0 for r in rates):
        raise ChainError("one positive rate per type required")
    for i, law in enumerate(nu.laws):
        for k, p in law.entries.items():
            bad = [j for j in range(d) if j not in (i, i + 1) and k[j] != 0]
            if bad:
                raise ChainError(f"type {i}: litter {k} has children of type {bad[0]} "
                                 f"outside {{{i}, {i + 1}}}")
            if single_mutant and i + 1 < d and k[i + 1] > 1:
                raise ChainError(f"type {i}: litter {k} has {k[i + 1]} type-{i + 1} children "
                                 "(single-mutant litters required)")
        if i + 1 < d:
            if sum(p for k, p in law.entries.items() if k[i] == 0) > 0:
                raise ChainError(f"type {i}: positive mass on litters without a type-{i} child")
            if sum(p for k, p in law.entries.items() if k[i + 1] == 0) >= 1:
                raise ChainError(f"type {i}: type {i + 1} is never born")
    lam_ij = lambda_matrix(nu, rates)
    for i in range(d - 1):
        if not lam_ij[i, i + 1] > 0:
            raise ChainError(f"mutation rate lambda_({i},{i + 1}) must be positive")
    bf = all(set(nu[i].entries) <= {tuple(2 * v for v in unit(d, i)),
                                     tuple(a + b for a, b in zip(unit(d, i), unit(d, i + 1)))}
             for i in range(d - 1))
    return ChainModel(nu.with_rates(rates), rates, single_mutant, lam_ij, bf)


def binary_fission_chain(pairs: Sequence[tuple[float, float]], last_rate: float = 1.0) -> ChainModel:
    """B((l_00, l_01), (l_11, l_12), ...): type i splits into two type-i at rate l_ii and
    into one type-i plus one type-(i+1) at rate l_{i,i+1}; the last type only splits."""
    d = len(pairs) + 1
    laws, rates = [], []
    for i, (a, b) in enumerate(pairs):
        lam = a + b
        two = tuple(2 * v for v in unit(d, i))
        mut = tuple(p + q for p, q in zip(unit(d, i), unit(d, i + 1)))
        laws.append(SparsePmf(d, {two: a / lam, mut: b / lam}))
        rates.append(lam)
    laws.append(SparsePmf(d, {tuple(2 * v for v in unit(d, d - 1)): 1.0}))
    rates.append(last_rate)
    return validate(ProgenyLaw(tuple(laws)), rates, single_mutant=True)


# ----------------------------------------------------------------- samples

@dataclass
class EmergenceSample:
    """``tau`` is (R, d) with ``inf`` beyond the target or where censored."""

    target: int
    start: int
    tau: np.ndarray
    parent_count: np.ndarray
    censored: np.ndarray
    horizon: float
    theta: np.ndarray | None = None
    single_birth: np.ndarray | None = None

    @property
    def values(self) -> np.ndarray:
        """tau_target, with censored entries set to the horizon."""
        v = self.tau[:, self.target].copy()
        v[self.censored] = self.horizon
        return v

    @property
    def censored_fraction(self) -> float:
        return float(self.censored.mean()) if len(self.censored) else 0.0


@njit(cache=True)
def _tau_direct_block(rng, x, lam, supp, cum, nsupp, horizon, cap, target, reps):
    d = x.shape[0]
    tau = np.full((reps, d), np.inf)
    parent = np.zeros(reps, np.int64)
    cens = np.zeros(reps, np.bool_)
    empty = np.zeros(0)
    for r in range(reps):
        out = _ct_kernel(rng, False, x, lam, supp, cum, nsupp, horizon, empty, cap, False, target)
        status = out[3]
        zij = out[10]
        first = out[11]
        if status == STOPPED:
            for j in range(target + 1):
                tau[r, j] = first[j]
            parent[r] = zij[:, target - 1].sum()
        else:
            cens[r] = True
            for j in range(target):
                tau[r, j] = first[j]
    return tau, parent, cens


@njit(cache=True)
def _tau_repr_kernel(rng, lam, supp, cum, nsupp, start, target, max_steps):
    """Lamperti chain up to the first type-`target` birth, pulled innermost-first.

    Level L runs on its own internal clock c[L] at speed Z[L]; its only inputs
    are arrivals from level L-1, buffered one at a time. Returns tau, theta
    (from the same paths), Z^{(target-1)} at tau_target, immigrant counts at the
    emergence of the next type, and a failure flag.
    """
    d = lam.shape[0]
    r = np.zeros(d)
    c = np.zeros(d)
    z = np.zeros(d, np.int64)
    xs = np.zeros(d, np.int64)
    imm = np.zeros(d, np.int64)
    nxt = np.zeros(d)
    valid = np.zeros(d + 1, np.bool_)
    btime = np.zeros(d + 1)
    bcount = np.zeros(d + 1, np.int64)
    tau = np.full(d, np.inf)
    theta = np.zeros(d)
    imm_at = np.zeros(d, np.int64)
    done = np.zeros(d + 1, np.bool_)
    for L in range(start, target):
        nxt[L] = rng.exponential() / lam[L]
    z[start] = 1
    imm[start] = 1
    tau[start] = 0.0
    parent = 0
    steps = 0
    while not valid[target]:
        L = target - 1
        while L > start and not valid[L]:
            L -= 1
        steps += 1
        if steps > max_steps:
            return tau, theta, parent, imm_at, True
        own = np.inf
        if z[L] > 0:
            own = r[L] + (nxt[L] - c[L]) / z[L]
        arr = btime[L] if (L > start and valid[L]) else np.inf
        if arr == np.inf and own == np.inf:
            return tau, theta, parent, imm_at, True
        if arr <= own:
            ds = (arr - r[L]) * z[L]
            if not done[L + 1]:
                theta[L + 1] += ds / (xs[L] + 1)
            c[L] += ds
            r[L] = arr
            z[L] += bcount[L]
            imm[L] += bcount[L]
            valid[L] = False
        else:
            ds = nxt[L] - c[L]
            if not done[L + 1]:
                theta[L + 1] += ds / (xs[L] + 1)
            c[L] = nxt[L]
            r[L] = own
            nxt[L] += rng.exponential() / lam[L]
            u = rng.random()
            k = 0
            while k < nsupp[L] - 1 and u >= cum[L, k]:
                k += 1
            step = supp[L, k, L] - 1
            xs[L] += step
            z[L] += step
            born = supp[L, k, L + 1]
            if born > 0:
                valid[L + 1] = True
                btime[L + 1] = own
                bcount[L + 1] = born
                if not done[L + 1]:
                    done[L + 1] = True
                    tau[L + 1] = own
                    imm_at[L + 1] = imm[L]
                    if L + 1 == target:
                        parent = z[L]
    return tau, theta, parent, imm_at, False


@njit(cache=True)
def _tau_repr_block(rng, lam, supp, cum, nsupp, start, target, max_steps, reps):
    d = lam.shape[0]
    tau = np.full((reps, d), np.inf)
    theta = np.zeros((reps, d))
    parent = np.zeros(reps, np.int64)
    imm = np.zeros((reps, d), np.int64)
    fail = np.zeros(reps, np.bool_)
    for r in range(reps):
        t, th, p, im, f = _tau_repr_kernel(rng, lam, supp, cum, nsupp, start, target, max_steps)
        tau[r] = t
        theta[r] = th
        parent[r] = p
        imm[r] = im
        fail[r] = f
    return tau, theta, parent, imm, fail


class _Direct:
    def __init__(self, model: ChainModel, target: int, start: int, horizon: float, cap: int):
        tab = LawTables.of(model.nu)
        x = np.zeros(model.dim, np.int64)
        x[start] = 1
        self.args = (x, np.asarray(model.rates), tab.supp, tab.cum, tab.nsupp,
                     float(horizon), int(cap), int(target))

    def __call__(self, g, a, b):
        return _tau_direct_block(g, *self.args, b - a)


class _Repr:
    def __init__(self, model: ChainModel, target: int, start: int, max_steps: int):
        tab = LawTables.of(model.nu)
        self.args = (np.asarray(model.rates), tab.supp, tab.cum, tab.nsupp,
                     int(start), int(target), int(max_steps))

    def __call__(self, g, a, b):
        return _tau_repr_block(g, *self.args, b - a)


def _check_target(model: ChainModel, i: int, start: int):
    if not (0 <= start < i < model.dim):
        raise ValueError(f"need 0 <= start < i < d, got start={start}, i={i}")


def default_horizon(model: ChainModel) -> float:
    return 50.0 / model.mutation_rate(0)


def sample_tau_direct(model: ChainModel, i: int, R: int, seed: int, horizon: float | None = None,
                      start: int = 0, cap: int = DEFAULT_CAP, workers: int = 1) -> EmergenceSample:
    """First type-i birth in event-driven simulations started from one type-``start`` individual."""
    _check_target(model, i, start)
    horizon = default_horizon(model) if horizon is None else float(horizon)
    parts = rngmod.run_blocks(_Direct(model, i, start, horizon, cap), R, seed,
                              f"tau-direct-{start}-{i}", workers)
    tau, parent, cens = (np.concatenate([p[k] for p in parts]) for k in range(3))
    return EmergenceSample(i, start, tau, parent, cens, horizon)


def sample_tau_representation(model: ChainModel, i: int, R: int, seed: int, start: int = 0,
                              max_steps: int = 100_000_000, workers: int = 1) -> EmergenceSample:
    """tau_i from nested time changes of the driving compound Poisson paths.

    ``theta`` holds, for each k, the integral of 1/(1 + X^{k-1,k-1}) up to the
    first mutant jump on the same paths; ``single_birth[:, k]`` flags paths
    where type k-1 had received one immigrant when type k emerged.
    """
    _check_target(model, i, start)
    parts = rngmod.run_blocks(_Repr(model, i, start, max_steps), R, seed,
                              f"tau-repr-{start}-{i}", workers)
    tau, theta, parent, imm, fail = (np.concatenate([p[k] for p in parts]) for k in range(5))
    return EmergenceSample(i, start, tau, parent, fail, math.inf, theta, imm == 1)


def sample_theta(model: ChainModel, k: int, R: int, seed: int, workers: int = 1) -> np.ndarray:
    """Independent draws of theta_k = int_0^{gamma_k} ds / (1 + X^{k-1,k-1}_s)."""
    s = sample_tau_representation(model, k, R, seed + 7919 * k, start=k - 1, workers=workers)
    return s.theta[:, k]


def sample_theta_sum(model: ChainModel, i: int, R: int, seed: int, workers: int = 1) -> np.ndarray:
    return sum(sample_theta(model, k, R, seed, workers) for k in range(1, i + 1))


# ----------------------------------------------------------------- reports

@dataclass
class BoundReport:
    grid: np.ndarray
    tau_survival: np.ndarray
    theta_survival: np.ndarray
    joint_se: np.ndarray
    censored_fraction: float

    @property
    def excess(self) -> np.ndarray:
        """How far the tau survival sits above the bound, in joint standard errors."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.joint_se > 0,
                            (self.tau_survival - self.theta_survival) / self.joint_se,
                            np.where(self.tau_survival > self.theta_survival, np.inf, 0.0))

    @property
    def holds(self) -> bool:
        return bool(np.all(self.excess <= 3.0))


def bound_check(model: ChainModel, i: int, t_grid: Sequence[float], R: int, seed: int,
                workers: int = 1) -> BoundReport:
    """P(tau_i > t) <= P(theta_1 + ... + theta_i > t) on a grid, tau from the direct engine."""
    grid = np.asarray(t_grid, float)
    tau = sample_tau_direct(model, i, R, seed, workers=workers)
    th = sample_theta_sum(model, i, R, seed + 1, workers)
    s_tau = survival(tau.values, grid)
    s_th = survival(th, grid)
    se = np.sqrt(s_tau * (1 - s_tau) / R + s_th * (1 - s_th) / R)
    return BoundReport(grid, s_tau, s_th, se, tau.censored_fraction)


@dataclass
class RungStats:
    ratios: tuple[float, ...]
    exceed: dict[float, float]
    exceed_se: dict[float, float]
    single_birth: dict[int, float]
    mean_tau: float
    mean_tau_se: float
    mean_theta_sum: float
    replicates: int


@dataclass
class LadderReport:
    target: int
    rungs: list[RungStats] = field(default_factory=list)

    def monotone(self, delta: float) -> bool:
        """Exceedance probabilities non-increasing along the ladder within 3 SE."""
        p = [r.exceed[delta] for r in self.rungs]
        se = [r.exceed_se[delta] for r in self.rungs]
        return all(p[n + 1] <= p[n] + 3 * math.hypot(se[n], se[n + 1]) for n in range(len(p) - 1))

    def strictly_decreasing(self, delta: float) -> bool:
        p = [r.exceed[delta] for r in self.rungs]
        return all(b < a for a, b in zip(p, p[1:]))


def ladder_ratios(model: ChainModel, i: int) -> tuple[float, ...]:
    """lambda_{k-2,k-1} / lambda_{k-1,k} for k = 2..i (zero-based)."""
    return tuple(model.mutation_rate(k - 2) / model.mutation_rate(k - 1) for k in range(2, i + 1))


def ratio_convergence(models: Sequence[ChainModel], i: int, R: int, seed: int,
                      deltas: Sequence[float] = DELTAS, workers: int = 1) -> LadderReport:
    if len(models) < 1:
        raise ValueError("empty ladder")
    base = models[0].mutation_rate(0)
    rats = [ladder_ratios(m, i) for m in models]
    for m, (a, b) in zip(models[1:], zip(rats, rats[1:])):
        if not math.isclose(m.mutation_rate(0), base):
            raise ValueError("the first mutation rate must be the same on every rung")
        if not all(y < x for x, y in zip(a, b)):
            raise ValueError("ladder ratios must strictly decrease from rung to rung")
    rep = LadderReport(i)
    for n, m in enumerate(models):
        s = sample_tau_representation(m, i, R, seed + 1000 * n, workers=workers)
        ok = ~s.censored
        tau = s.tau[ok, i]
        th = s.theta[ok, 1:i + 1].sum(axis=1)
        ratio = tau / th
        exceed = {float(dl): float(np.mean(np.abs(ratio - 1) > dl)) for dl in deltas}
        ex_se = {dl: math.sqrt(p * (1 - p) / max(len(ratio), 1)) for dl, p in exceed.items()}
        single = {k: float(s.single_birth[ok, k].mean()) for k in range(2, i + 1)}
        mt = Moments().push_many(tau)
        rep.rungs.append(RungStats(rats[n], exceed, ex_se, single, mt.mean, mt.se,
                                   float(th.mean()), int(ok.sum())))
    return rep


# ------------------------------------------------------------ closed forms

@dataclass(frozen=True)
class LaplaceValue:
    value: float
    tail_bound: float
    terms: int
    form: str
    converged: bool = True


def _bf_rates(model: ChainModel, i: int) -> tuple[float, float, float]:
    if not model.binary_fission:
        raise ValueError("closed forms need a binary-fission model")
    if not 1 <= i < model.dim:
        raise ValueError("target type out of range")
    a, b = model.self_rate(i - 1), model.mutation_rate(i - 1)
    return a, b, model.rates[i - 1]


def laplace_tau(model: ChainModel, i: int, alpha: float, n_max: int | None = None,
                form: str = "corrected", tol: float = 1e-15) -> LaplaceValue:
    """E exp(-alpha tau_i) started from one type-(i-1) individual, as a series.

    The n-th term is lam_{i-1,i} lam_{i-1,i-1}^n / P_n. ``corrected`` takes P_n as
    the product over j = 1..n+1 of (alpha_j + ... + alpha_n + abar_{n+1}), the
    value of the ordered exponential integral. ``printed`` takes the product
    over k = 0..n with alpha_0 = 0, which repeats the j = 1 factor and drops abar_{n+1}.
    Consecutive terms shrink at least by r = lam_{i-1,i-1}/lam_{i-1}, giving
    the tail bound T_N r / (1 - r).
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if form not in ("corrected", "printed"):
        raise ValueError(f"unknown form {form!r}")
    a, b, lam = _bf_rates(model, i)
    r = a / lam
    limit = n_max if n_max is not None else 1_000_000
    total = 0.0
    # alpha_j + ... + alpha_n + abar_{n+1} telescopes to lam + alpha / j
    log_p = math.log(lam + alpha)  # n = 0: both forms have the single factor lam + alpha
    n = 0
    term = b / (lam + alpha)
    while True:
        total += term
        tail = term * r / (1 - r) if r < 1 else math.inf
        if a == 0:
            tail = 0.0
        if tail <= tol * max(total, 1e-300) or n + 1 >= limit:
            break
        n += 1
        if form == "corrected":
            # P_n = prod_{j=1}^{n+1} (lam + alpha/j)
            log_p += math.log(lam + alpha / (n + 1))
        else:
            # P_n = (lam + alpha) prod_{j=1}^{n} (lam + alpha/j)
            log_p += math.log(lam + alpha / n)
        term = b * math.exp(n * math.log(a) - log_p)
    return LaplaceValue(total, tail, n + 1, form, tail <= tol * max(total, 1e-300))


def theta_mean_integral(a: float, b: float) -> tuple[float, float]:
    """Quadrature of int_0^inf e^{-b s} (1 - e^{-a s}) / (a s) ds and its error estimate."""
    if a == 0:
        return 1.0 / b, 0.0

    def f(s):
        if s == 0.0:
            return 1.0
        return math.exp(-b * s) * (-math.expm1(-a * s)) / (a * s)

    val, err = integrate.quad(f, 0.0, math.inf, epsabs=1e-14, epsrel=1e-13, limit=500)
    return val, err


@dataclass(frozen=True)
class ExpectationReport:
    stated: float
    frullani: float
    quadrature: float
    quadrature_error: float
    stated_supported: bool
    frullani_supported: bool
    chain_stated: float | None = None
    chain_frullani: float | None = None
    chain_leading: float | None = None


def expected_tau(model: ChainModel, i: int, tol: float = 1e-9) -> ExpectationReport:
    """Mean of tau_i from one type-(i-1) individual, three ways.

    ``stated`` is ln(lam/b) / (a b); ``frullani`` is ln(lam/b) / a; ``quadrature``
    integrates the defining integral numerically. Chain sums over k = 1..i give
    the stated sum of b_k^{-2}, the sum of the Frullani means and the sum of b_k^{-1}.
    """
    a, b, lam = _bf_rates(model, i)
    ln = math.log(lam / b)
    stated = ln / (a * b) if a > 0 else math.inf
    fr = ln / a if a > 0 else 1.0 / b
    q, qe = theta_mean_integral(a, b)
    per_k = [_bf_rates(model, k) for k in range(1, i + 1)]
    return ExpectationReport(
        stated, fr, q, qe,
        abs(stated - q) <= tol, abs(fr - q) <= tol,
        chain_stated=sum(bk ** -2 for _, bk, _ in per_k),
        chain_frullani=sum((math.log(lk / bk) / ak if ak > 0 else 1 / bk) for ak, bk, lk in per_k),
        chain_leading=sum(1 / bk for _, bk, _ in per_k),
    )
