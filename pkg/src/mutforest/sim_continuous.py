"""Continuous-time multitype branching: Gillespie and Lamperti engines,
Z^{i,j} bookkeeping, Malthusian data and the supercritical growth experiment."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from . import rng as rngmod
from .lattice import ConvergenceError, LawError, ProgenyLaw, mean_report, perron
from .sim_discrete import ExperimentError, LawTables, extinction_probability
from .stats import Moments

DEFAULT_CAP = 10_000_000
ENGINES = ("direct", "lamperti")

OK, EXTINCT, CAPPED, STOPPED = 0, 1, 2, 3
STATUS = {OK: "ok", EXTINCT: "extinct", CAPPED: "capped", STOPPED: "stopped"}


@dataclass(frozen=True)
class Rates:
    lam: tuple[float, ...]

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lam)
        object.__setattr__(self, "lam", lam)
        if not lam or any(not (v > 0 and math.isfinite(v)) for v in lam):
            raise ValueError("rates must be positive and finite")

    def __len__(self) -> int:
        return len(self.lam)

    def array(self) -> np.ndarray:
        return np.asarray(self.lam, float)


def _rates(nu: ProgenyLaw, lam) -> Rates:
    if lam is None:
        if nu.rates is None:
            raise ValueError("no reproduction rates given")
        lam = nu.rates
    r = lam if isinstance(lam, Rates) else Rates(tuple(lam))
    if len(r) != nu.dim:
        raise ValueError("one rate per type required")
    return r


def _check_ct(nu: ProgenyLaw):
    if not nu.continuous_time_ready():
        raise LawError("continuous-time laws need nu_i(e_i) = 0 for every type")


# --------------------------------------------------------------------------- kernel

@njit(cache=True)
def _grow(a, n):
    out = np.empty((2 * a.shape[0],) + a.shape[1:], a.dtype)
    out[:n] = a[:n]
    return out


@njit(cache=True)
def _ct_kernel(rng, lamperti, x, lam, supp, cum, nsupp, t_max, t_grid, cap, record, stop_type):
    """One trajectory.

    Returns (zij at grid, clocks at grid, number of valid grid points, status,
    end time, event times, event types, event children, event clocks, n events,
    final zij, first time each type is present).
    """
    d = x.shape[0]
    G = t_grid.shape[0]
    zij = np.zeros((d, d), np.int64)
    z = x.copy()
    for i in range(d):
        zij[i, i] = x[i]
    clock = np.zeros(d)
    nxt = np.empty(d)
    if lamperti:
        for i in range(d):
            nxt[i] = rng.exponential() / lam[i]
    obs = np.zeros((G, d, d), np.int64)
    obs_c = np.zeros((G, d))
    cap_ev = 16 if record else 1
    ev_t = np.empty(cap_ev)
    ev_type = np.empty(cap_ev, np.int64)
    ev_child = np.empty((cap_ev, d), np.int64)
    ev_clock = np.empty((cap_ev, d))
    n_ev = 0
    g = 0
    t = 0.0
    total = 0
    for i in range(d):
        total += z[i]
    status = 0
    first = np.full(d, np.inf)
    for i in range(d):
        if z[i] > 0:
            first[i] = 0.0
    if stop_type >= 0 and z[stop_type] > 0:
        return (obs, obs_c, 0, 3, 0.0, ev_t[:0], ev_type[:0], ev_child[:0], ev_clock[:0], 0,
                zij, first)
    while True:
        # waiting time and event type
        if lamperti:
            best = -1
            dt = np.inf
            for i in range(d):
                if z[i] > 0:
                    w = (nxt[i] - clock[i]) / z[i]
                    if w < dt:
                        dt = w
                        best = i
        else:
            rate = 0.0
            for i in range(d):
                rate += lam[i] * z[i]
            best = -1
            dt = np.inf
            if rate > 0.0:
                dt = rng.exponential() / rate
                u = rng.random() * rate
                acc = 0.0
                best = d - 1
                for i in range(d):
                    acc += lam[i] * z[i]
                    if u < acc and z[i] > 0:
                        best = i
                        break
                while z[best] == 0:
                    best -= 1
        if best < 0:
            status = 1
        t_ev = t + dt
        if best < 0 or t_ev > t_max:
            t_stop = t_max
            while g < G:
                obs[g] = zij
                for i in range(d):
                    obs_c[g, i] = clock[i] + z[i] * (t_grid[g] - t)
                g += 1
            for i in range(d):
                clock[i] += z[i] * (t_stop - t)
            t = t_stop
            break
        while g < G and t_grid[g] < t_ev:
            obs[g] = zij
            for i in range(d):
                obs_c[g, i] = clock[i] + z[i] * (t_grid[g] - t)
            g += 1
        for i in range(d):
            clock[i] += z[i] * dt
        t = t_ev
        if lamperti:
            clock[best] = nxt[best]
            nxt[best] += rng.exponential() / lam[best]
        c = 0
        u = rng.random()
        while c < nsupp[best] - 1 and u >= cum[best, c]:
            c += 1
        for j in range(d):
            k = supp[best, c, j]
            if j == best:
                k -= 1
            zij[best, j] += k
            z[j] += k
            total += k
            if z[j] > 0 and first[j] == np.inf:
                first[j] = t
        if record:
            if n_ev == ev_t.shape[0]:
                ev_t = _grow(ev_t, n_ev)
                ev_type = _grow(ev_type, n_ev)
                ev_child = _grow(ev_child, n_ev)
                ev_clock = _grow(ev_clock, n_ev)
            ev_t[n_ev] = t
            ev_type[n_ev] = best
            for j in range(d):
                ev_child[n_ev, j] = supp[best, c, j]
                ev_clock[n_ev, j] = clock[j]
            n_ev += 1
        if stop_type >= 0 and z[stop_type] > 0:
            status = 3
            break
        if total > cap:
            status = 2
            break
    return (obs, obs_c, g, status, t, ev_t[:n_ev], ev_type[:n_ev], ev_child[:n_ev],
            ev_clock[:n_ev], n_ev, zij, first)


# ------------------------------------------------------------------ trajectories

@dataclass(frozen=True)
class CompoundPoissonPath:
    """Pure-jump path X^{(i)} on internal time; value at 0- is 0."""

    times: np.ndarray
    jumps: np.ndarray
    rate: float
    horizon: float

    def value_at(self, s: float) -> np.ndarray:
        n = int(np.searchsorted(self.times, s, side="right"))
        return self.jumps[:n].sum(axis=0)


@dataclass(frozen=True)
class CTTrajectory:
    x: np.ndarray
    rates: Rates
    t_max: float
    engine: str
    times: np.ndarray
    types: np.ndarray
    children: np.ndarray
    clocks: np.ndarray
    status: int
    t_end: float

    @property
    def dim(self) -> int:
        return len(self.x)

    @property
    def truncated(self) -> bool:
        return self.status == CAPPED

    def __len__(self) -> int:
        return len(self.times)

    def increments(self) -> np.ndarray:
        """(n, d, d) change of Z^{i,j} at each event."""
        n, d = len(self), self.dim
        inc = np.zeros((n, d, d), np.int64)
        steps = self.children.copy()
        steps[np.arange(n), self.types] -= 1
        inc[np.arange(n), self.types] = steps
        return inc

    def zij_path(self) -> np.ndarray:
        """(n + 1, d, d): Z^{i,j} at time 0 and after every event."""
        path = np.zeros((len(self) + 1, self.dim, self.dim), np.int64)
        path[0] = np.diag(self.x)
        np.cumsum(self.increments(), axis=0, out=path[1:])
        path[1:] += path[0]
        return path

    def z_path(self) -> np.ndarray:
        return self.zij_path().sum(axis=1)

    def _index(self, t: float) -> int:
        if t > self.t_end + 1e-12 and self.status != EXTINCT:
            raise ValueError(f"t={t} lies beyond the simulated horizon {self.t_end}")
        return int(np.searchsorted(self.times, t, side="right"))

    def zij_at(self, t: float) -> np.ndarray:
        n = self._index(t)
        return np.diag(self.x) + self.increments()[:n].sum(axis=0)

    def z_at(self, t: float) -> np.ndarray:
        return self.zij_at(t).sum(axis=0)

    def clock_at(self, t: float) -> np.ndarray:
        """c_i(t) = int_0^t Z^{(i)}_s ds, piecewise linear between events."""
        n = self._index(t)
        base = self.clocks[n - 1] if n else np.zeros(self.dim)
        t0 = self.times[n - 1] if n else 0.0
        return base + self.z_path()[n] * (t - t0)

    def driving_path(self, i: int) -> CompoundPoissonPath:
        """The compound Poisson path X^{(i)} consumed by this trajectory."""
        sel = self.types == i
        jumps = self.children[sel].copy()
        jumps[:, i] -= 1
        return CompoundPoissonPath(self.clocks[sel, i].copy(), jumps, self.rates.lam[i],
                                   float(self.clocks[-1, i]) if len(self) else 0.0)

    def decomposition_residual(self) -> int:
        """max |Z^{(j)} - sum_i Z^{i,j}| over all event times, with Z tracked independently."""
        z = np.asarray(self.x, np.int64).copy()
        zp = self.zij_path()
        worst = int(np.max(np.abs(zp[0].sum(axis=0) - z)))
        for e in range(len(self)):
            z += self.children[e]
            z[self.types[e]] -= 1
            worst = max(worst, int(np.max(np.abs(zp[e + 1].sum(axis=0) - z))))
        return worst

    def to_csv(self) -> str:
        buf = io.StringIO()
        d = self.dim
        buf.write("time,event_type," + ",".join(f"child_{j}" for j in range(d)) + ","
                  + ",".join(f"Z_{j}" for j in range(d)) + "\n")
        zs = self.z_path()
        buf.write("0.0,-1," + ",".join("0" for _ in range(d)) + ","
                  + ",".join(str(int(v)) for v in zs[0]) + "\n")
        for e in range(len(self)):
            buf.write(f"{float(self.times[e])!r},{int(self.types[e])},"
                      + ",".join(str(int(v)) for v in self.children[e]) + ","
                      + ",".join(str(int(v)) for v in zs[e + 1]) + "\n")
        return buf.getvalue()


def mutation_count_at(traj: CTTrajectory, i: int, t: float) -> int:
    """M_{i,t}: type-i individuals born so far to parents of another type."""
    zij = traj.zij_at(t)
    return int(sum(zij[k, i] for k in range(traj.dim) if k != i))


def _simulate(nu: ProgenyLaw, lam, x, t_max: float, rng: np.random.Generator, lamperti: bool,
              cap: int, stop_type: int = -1) -> CTTrajectory:
    _check_ct(nu)
    r = _rates(nu, lam)
    x = np.asarray(x, np.int64)
    if x.shape != (nu.dim,) or np.any(x < 0):
        raise ValueError("initial state must be d nonnegative integers")
    tab = LawTables.of(nu)
    out = _ct_kernel(rng, lamperti, x, r.array(), tab.supp, tab.cum, tab.nsupp, float(t_max),
                     np.zeros(0), int(cap), True, int(stop_type))
    _, _, _, status, t_end, ev_t, ev_type, ev_child, ev_clock = out[:9]
    return CTTrajectory(x.copy(), r, float(t_max), "lamperti" if lamperti else "direct",
                        ev_t, ev_type, ev_child, ev_clock, int(status), float(t_end))


def simulate_direct(nu: ProgenyLaw, lam, x, t_max: float, rng: np.random.Generator,
                    cap: int = DEFAULT_CAP) -> CTTrajectory:
    """Event-driven simulation: next event after Exp(sum_i lam_i Z_i), type i with
    probability proportional to lam_i Z_i."""
    return _simulate(nu, lam, x, t_max, rng, False, cap)


def simulate_lamperti(nu: ProgenyLaw, lam, x, t_max: float, rng: np.random.Generator,
                      cap: int = DEFAULT_CAP) -> CTTrajectory:
    """Time-changed compound Poisson paths, extended one jump at a time.

    Type i consumes internal time at speed Z^{(i)}; its next jump fires when the
    clock c_i reaches the pending jump time of X^{(i)}.
    """
    return _simulate(nu, lam, x, t_max, rng, True, cap)


# --------------------------------------------------------------------- batches

@dataclass
class CTBatch:
    """Grid observations of many trajectories: ``zij`` is (R, G, d, d)."""

    t_grid: np.ndarray
    zij: np.ndarray
    clocks: np.ndarray
    n_valid: np.ndarray
    status: np.ndarray
    t_end: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return self.zij.sum(axis=2)

    @property
    def mutations(self) -> np.ndarray:
        """(R, G, d) M_{i,t} = sum_{k != i} Z^{k,i}_t."""
        zij = self.zij
        diag = np.diagonal(zij, axis1=2, axis2=3)
        return zij.sum(axis=2) - diag


@njit(cache=True)
def _ct_block(rng, lamperti, x, lam, supp, cum, nsupp, t_max, t_grid, cap, reps):
    d = x.shape[0]
    G = t_grid.shape[0]
    zij = np.zeros((reps, G, d, d), np.int64)
    clocks = np.zeros((reps, G, d))
    n_valid = np.zeros(reps, np.int64)
    status = np.zeros(reps, np.int64)
    t_end = np.zeros(reps)
    for r in range(reps):
        out = _ct_kernel(rng, lamperti, x, lam, supp, cum, nsupp, t_max, t_grid, cap, False, -1)
        zij[r] = out[0]
        clocks[r] = out[1]
        n_valid[r] = out[2]
        status[r] = out[3]
        t_end[r] = out[4]
    return zij, clocks, n_valid, status, t_end


class _CTBlock:
    def __init__(self, lamperti, x, lam, tab, t_grid, cap):
        self.args = (lamperti, np.asarray(x, np.int64), lam, tab.supp, tab.cum, tab.nsupp,
                     float(np.max(t_grid)), np.asarray(t_grid, float), int(cap))

    def __call__(self, g, start, stop):
        return _ct_block(g, *self.args, stop - start)


def observe(nu: ProgenyLaw, lam, x, t_grid: Sequence[float], R: int, seed: int,
            engine: str = "direct", cap: int = DEFAULT_CAP, workers: int = 1) -> CTBatch:
    """R independent trajectories observed at the (sorted) times in ``t_grid``."""
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}")
    _check_ct(nu)
    r = _rates(nu, lam)
    grid = np.asarray(sorted(float(t) for t in t_grid))
    if grid.size == 0 or grid[0] < 0:
        raise ValueError("t_grid must be nonempty and nonnegative")
    fn = _CTBlock(engine == "lamperti", x, r.array(), LawTables.of(nu), grid, cap)
    parts = rngmod.run_blocks(fn, R, seed, f"ct-{engine}", workers)
    cat = [np.concatenate([p[k] for p in parts]) for k in range(5)]
    return CTBatch(grid, *cat)


# --------------------------------------------------------------------- Malthus

@dataclass(frozen=True)
class MalthusData:
    A: np.ndarray
    rho1: float
    u: np.ndarray
    v: np.ndarray

    @property
    def regime(self) -> str:
        if abs(self.rho1) < 1e-12:
            return "critical"
        return "supercritical" if self.rho1 > 0 else "subcritical"


def malthus(m: np.ndarray, lam) -> MalthusData:
    """Dominant eigenpair of A = diag(lam)(M - I), found on the nonnegative A + cI."""
    m = np.asarray(getattr(m, "mean_matrix", m), float)
    lam = np.asarray(lam.lam if isinstance(lam, Rates) else lam, float)
    A = np.diag(lam) @ (m - np.eye(len(lam)))
    c = max(0.0, -float(np.min(np.diag(A)))) + 1.0
    try:
        rho, u, v = perron(A + c * np.eye(len(lam)))
    except ConvergenceError as e:
        raise ConvergenceError(f"Malthusian eigenpair: {e}") from None
    return MalthusData(A, rho - c, u, v)


# -------------------------------------------------------------- growth report

def ratio_candidates(m: np.ndarray, lam, rho1: float) -> dict[str, np.ndarray]:
    """Candidate limits of M_{i,t}/Z^{(i)}_t.

    ``lln`` follows from Z - M = x_i + X^{ii}(c_i(t)), drift lam_i (m_ii - 1),
    and c_i(t) ~ Z^{(i)}_t / rho_1; ``stated`` is 1 + (1 - m_ii)/(lam_i rho_1).
    """
    lam = np.asarray(lam.lam if isinstance(lam, Rates) else lam, float)
    diag = np.diag(np.asarray(m, float))
    return {"lln": 1 + lam * (1 - diag) / rho1,
            "stated": 1 + (1 - diag) / (lam * rho1)}


@dataclass
class GrowthRow:
    t: float
    type: int
    survivors: int
    scaled_mean: float
    scaled_se: float
    ratio_mean: float
    ratio_se: float
    slope_mean: float
    slope_se: float
    lln_target: float
    stated_target: float

    @property
    def lln_within(self) -> bool:
        return abs(self.ratio_mean - self.lln_target) <= 3 * self.ratio_se

    @property
    def stated_within(self) -> bool:
        return abs(self.ratio_mean - self.stated_target) <= 3 * self.ratio_se


@dataclass
class GrowthReport:
    rho1: float
    rates: tuple[float, ...]
    x: tuple[int, ...]
    replicates: int
    extinct: int
    capped: int
    survival_fraction: float
    survival_theory: float
    rows: list[GrowthRow] = field(default_factory=list)

    def row(self, t: float, i: int) -> GrowthRow:
        for r in self.rows:
            if r.type == i and abs(r.t - t) < 1e-12:
                return r
        raise KeyError((t, i))

    def verdict(self, t: float, i: int) -> str:
        r = self.row(t, i)
        if r.survivors < 2:
            return "no uncapped surviving paths"
        both = (r.lln_within, r.stated_within)
        return {(True, False): "lln", (False, True): "stated",
                (True, True): "both", (False, False): "neither"}[both]

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "rows"}
        d["rows"] = [dict(r.__dict__, lln_within=r.lln_within, stated_within=r.stated_within)
                     for r in self.rows]
        d["verdicts"] = {f"{r.t}:{r.type}": self.verdict(r.t, r.type) for r in self.rows}
        return d


def supercritical_growth(nu: ProgenyLaw, lam, x, t_grid: Sequence[float], R: int, seed: int,
                         engine: str = "direct", cap: int = DEFAULT_CAP,
                         workers: int = 1) -> GrowthReport:
    """Ratio M_{i,t}/Z^{(i)}_t and e^{-rho_1 t} Z^{(i)}_t on surviving, uncapped paths."""
    rep = mean_report(nu)
    if not rep.primitive or not rep.non_singular:
        raise ExperimentError("growth experiment needs a primitive, non-singular law")
    r = _rates(nu, lam)
    md = malthus(rep.mean_matrix, r)
    if md.rho1 <= 0:
        raise ExperimentError(f"law is not supercritical (rho_1 = {md.rho1:.6g})")
    cand = ratio_candidates(rep.mean_matrix, r, md.rho1)
    batch = observe(nu, r, x, t_grid, R, seed, engine, cap, workers)
    extinct = batch.status == EXTINCT
    capped = batch.status == CAPPED
    keep = ~extinct & ~capped
    q = extinction_probability(nu)
    x_arr = np.asarray(x, np.int64)
    report = GrowthReport(md.rho1, r.lam, tuple(int(v) for v in x_arr), R, int(extinct.sum()),
                          int(capped.sum()), float(1 - extinct.mean()),
                          float(1 - np.prod(q ** x_arr)))
    z, mut = batch.z[keep], batch.mutations[keep]
    for g, t in enumerate(batch.t_grid):
        for i in range(nu.dim):
            zi, mi = z[:, g, i], mut[:, g, i]
            pos = zi > 0
            scaled = Moments().push_many(np.exp(-md.rho1 * t) * zi)
            ratio = Moments().push_many(mi[pos] / zi[pos])
            slope = Moments().push_many(np.log(zi[pos]) / t) if t > 0 else Moments()
            report.rows.append(GrowthRow(float(t), i, int(keep.sum()), scaled.mean, scaled.se,
                                         ratio.mean, ratio.se, slope.mean, slope.se,
                                         float(cand["lln"][i]), float(cand["stated"][i])))
    return report
