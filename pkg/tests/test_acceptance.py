"""Acceptance criteria, each run at its stated scale and tolerance.

Every test records a ``CRITERION n: PASS|FAIL`` line; the lines are printed
as they happen and again in the terminal summary.
"""
import math
import time
from collections import Counter

import numpy as np

from mutforest.cli import run
from mutforest.emergence import (binary_fission_chain, bound_check, expected_tau, laplace_tau,
                                 ratio_convergence, sample_tau_direct, sample_tau_representation,
                                 sample_theta)
from mutforest.lattice import mean_report
from mutforest.models import critical_pair, diamond, triangle
from mutforest.mutation_law import (consistent_queries, joint_mutation_pmf, mean_identity_residual,
                                    mutation_law, mutation_mean_report, mutation_progeny)
from mutforest.rng import generator
from mutforest.sim_continuous import (observe, simulate_direct, simulate_lamperti,
                                      supercritical_growth)
from mutforest.sim_discrete import (SampleConfig, direction_asymptotics, mutation_child_vectors,
                                    sample_censuses)
from mutforest.stats import (Moments, chi_square_two_sample, empirical, ks_distance, ks_threshold,
                             total_variation)
from test_mutation_law import Q_DIAMOND, scaled_law

RESULTS: list[str] = []
ALPHA = 1e-3


def record(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_criterion_01_mutation_law():
    t0 = time.perf_counter()
    t = mutation_progeny(diamond(), 0, 1e-8)
    secs = time.perf_counter() - t0
    err = abs(t.pmf((0, 0)) - Q_DIAMOND)
    mass = float(t.pmf.mass()) + t.truncation_error
    ok = err <= 2e-5 and abs(mass - 1) <= 1e-10 and secs < 5
    record(1, ok, f"mu_1(0,0)={t.pmf((0, 0)):.8f} oracle={Q_DIAMOND:.8f} "
                  f"|mass+trunc-1|={abs(mass - 1):.1e} runtime={secs:.2f}s")


def test_criterion_02_empirical_mutation_law():
    t0 = time.perf_counter()
    nu = diamond()
    mu = mutation_law(nu, eps=1e-12)[0]
    vecs, n_cens = mutation_child_vectors(SampleConfig(nu, (1, 0), replicates=100_000, seed=2), 0)
    emp = empirical(map(tuple, vecs.tolist()))
    tv = total_variation(emp, {k: float(p) for k, p in mu.entries.items()})
    secs = time.perf_counter() - t0
    ok = tv < 0.01 and secs < 60 and n_cens == 0
    record(2, ok, f"TV={tv:.4f} over {len(vecs)} type-0 cluster vertices, censored={n_cens}, "
                  f"runtime={secs:.1f}s")


def test_criterion_03_mean_relation():
    worst = 0.0
    laws = []
    d_seen = set()
    for seed in range(1000):
        if len(laws) == 20:
            break
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 5))
        laws.append(_random_subcritical(rng, d))
        d_seen.add(d)
    for nu in laws:
        r = mean_report(nu)
        rbar = mutation_mean_report(r)
        m = r.mean_matrix
        for i in range(nu.dim):
            for j in range(nu.dim):
                if i != j:
                    worst = max(worst, abs(rbar.matrix[i, j] - m[i, j] / (1 - m[i, i])))
        worst = max(worst, mean_identity_residual(r, rbar))
    signs = []
    for rho in (0.7, 1.0, 1.3):
        r = mean_report(scaled_law([[.3, .5, .2], [.4, .1, .6], [.3, .3, .3]], rho))
        rb = mutation_mean_report(r)
        signs.append((round(r.spectral_radius - 1, 9), round(rb.spectral_radius - 1, 9),
                      r.criticality, rb.criticality))
    agree = all(np.sign(a) == np.sign(b) and c == e for a, b, c, e in signs)
    ok = worst <= 1e-12 and agree and len(laws) == 20
    record(3, ok, f"20 random subcritical laws (d in {sorted(d_seen)}): max residual {worst:.1e}; "
                  f"criticality transfer {[s[2] + '->' + s[3] for s in signs]}")


def _random_subcritical(rng, d):
    from mutforest.lattice import ProgenyLaw, SparsePmf
    laws = []
    for i in range(d):
        n = int(rng.integers(1, 5))
        keys = {tuple(int(v) for v in rng.integers(0, 3, d)) for _ in range(n)}
        w = rng.random(len(keys))
        laws.append(dict(zip(keys, w / w.sum())))
    m = np.array([[sum(p * k[j] for k, p in l.items()) for j in range(d)] for l in laws])
    rho = max(abs(np.linalg.eigvals(m)))
    keep = min(1.0, rng.uniform(0.3, 0.95) / rho) if rho > 0 else 1.0
    out = []
    for l in laws:
        ent = {k: p * keep for k, p in l.items()}
        z = (0,) * d
        ent[z] = ent.get(z, 0.0) + 1 - keep
        tot = sum(ent.values())
        out.append(SparsePmf(d, {k: v / tot for k, v in ent.items()}))
    return ProgenyLaw(tuple(out))


def test_criterion_04_joint_mutation_law():
    t0 = time.perf_counter()
    nu = diamond()
    R = 1_000_000
    b = sample_censuses(SampleConfig(nu, (1, 1), replicates=R, seed=4), "walk")
    mu = mutation_law(nu, eps=1e-12)
    counts = Counter(zip(b.M_matrix[:, 0, 1].tolist(), b.M_matrix[:, 1, 0].tolist()))
    worst, atoms = 0.0, 0
    for q in consistent_queries((1, 1), 6):
        p = joint_mutation_pmf(mu, q)
        e = counts.get((q.k[0][1], q.k[1][0]), 0) / R
        worst = max(worst, abs(p - e))
        atoms += 1
    secs = time.perf_counter() - t0
    ok = worst < 5 / math.sqrt(R) and secs < 180 and not b.censored.any()
    record(4, ok, f"{atoms} atoms with sum n <= 6: max |pmf - freq| = {worst:.2e} "
                  f"(limit {5 / math.sqrt(R):.0e}), runtime={secs:.1f}s")


def test_criterion_05_discrete_engines():
    cfg = SampleConfig(diamond(), (1, 1), replicates=100_000, seed=5)
    a = sample_censuses(cfg, "forest")
    b = sample_censuses(cfg, "walk")
    chi = chi_square_two_sample(a.keys(), b.keys())
    ok = chi.pvalue > ALPHA
    record(5, ok, f"census (N, M_ij) chi2={chi.statistic:.1f} dof={chi.dof} p={chi.pvalue:.3f}")


def test_criterion_06_direction_asymptotics():
    sub = direction_asymptotics(diamond(), (1, 0), [200], R=2000, seed=6)
    n_row, m_row = sub.get(200, 0, "N/n"), sub.get(200, 0, "M/n")
    n_ok = abs(n_row.estimate - 20 / 3) <= 3 * n_row.se
    m_ok = abs(m_row.estimate - 7 / 3) <= 3 * m_row.se
    m_derived = abs(m_row.estimate - m_row.target) <= 3 * m_row.se
    crit = direction_asymptotics(critical_pair(), (1, 0), [500], R=2000, seed=6)
    c_row = crit.get(500, 0, "M/N")
    c_ok = abs(c_row.estimate - 0.5) <= 3 * c_row.se
    ok = n_ok and m_ok and c_ok
    record(6, ok,
           f"N_1/n={n_row.estimate:.4f}+-{n_row.se:.4f} vs 6.667 [{'ok' if n_ok else 'off'}]; "
           f"M_1/n={m_row.estimate:.4f}+-{m_row.se:.4f} vs 2.333 [{'ok' if m_ok else 'off'}] "
           f"(vs derived {m_row.target:.4f}: {'ok' if m_derived else 'off'}); "
           f"critical M_1/N_1={c_row.estimate:.4f}+-{c_row.se:.4f} vs 0.5 "
           f"[{'ok' if c_ok else 'off'}], censored {c_row.censored}/2000")


def test_criterion_07_continuous_engines():
    nu = triangle()
    grid = [0.5, 1.0, 2.0]
    a = observe(nu, (1, 1), (1, 0), grid, R=100_000, seed=7, engine="direct")
    b = observe(nu, (1, 1), (1, 0), grid, R=100_000, seed=7, engine="lamperti")
    ps = []
    for g in range(len(grid)):
        ka = [tuple(r) for r in a.z[:, g].tolist()]
        kb = [tuple(r) for r in b.z[:, g].tolist()]
        ps.append(chi_square_two_sample(ka, kb).pvalue)
    worst = 0
    for sim, stream in ((simulate_direct, "d"), (simulate_lamperti, "l")):
        for r in range(1000):
            tr = sim(nu, (1, 1), (1, 1), 2.0, generator(7, f"decomp-{stream}", r))
            worst = max(worst, tr.decomposition_residual())
    consistent = np.array_equal(a.z, a.zij.sum(axis=2)) and np.array_equal(b.z, b.zij.sum(axis=2))
    ok = min(ps) > ALPHA and worst == 0 and consistent
    record(7, ok, "chi2 p-values at t=0.5,1,2: " + ", ".join(f"{p:.3f}" for p in ps)
           + f"; max decomposition residual over 2000 paths = {worst}")


def _growth_detail(rep, t):
    r = rep.row(t, 0)
    if r.survivors < 2:
        return f"t={t:g}: {rep.verdict(t, 0)} (capped {rep.capped}/{rep.replicates})", False
    conc = r.ratio_se < 0.05 * abs(r.ratio_mean)
    dl = (r.ratio_mean - r.lln_target) / r.ratio_se
    ds = (r.ratio_mean - r.stated_target) / r.ratio_se
    return (f"t={t:g}: M_0/Z_0={r.ratio_mean:.4f}+-{r.ratio_se:.4f} on {r.survivors} paths; "
            f"derived {r.lln_target:.4f} ({dl:+.1f} SE), printed {r.stated_target:.4f} "
            f"({ds:+.1f} SE) -> {rep.verdict(t, 0)}"), conc and rep.verdict(t, 0) != "neither"


def test_criterion_08_supercritical_growth():
    rep = supercritical_growth(triangle(), (2, 1), (1, 0), [25.0], R=100, seed=8)
    detail, ok = _growth_detail(rep, 25.0)
    record(8, ok, detail)


def test_criterion_08b_growth_reachable_times():
    rep = supercritical_growth(triangle(), (2, 1), (1, 0), [12.0, 14.0, 16.0], R=1000, seed=5)
    parts = [_growth_detail(rep, t) for t in (12.0, 14.0, 16.0)]
    line = f"CRITERION  8 (companion, reachable t): " + "; ".join(p[0] for p in parts)
    RESULTS.append(line)
    print(line)
    last = rep.row(16.0, 0)
    assert last.ratio_se < 0.05 * last.ratio_mean
    assert abs(last.ratio_mean - last.stated_target) > 3 * last.ratio_se


def test_criterion_09_emergence_identities():
    chain = binary_fission_chain([(1, 1), (1, 5)])
    R = 100_000
    thr = ks_threshold(R, R, ALPHA)
    tau2 = sample_tau_direct(chain, 1, R, seed=9)
    th2 = sample_theta(chain, 1, R, seed=10)
    d1 = ks_distance(tau2.values, th2)
    rep = bound_check(chain, 2, np.linspace(0.0, 3.0, 20), R, seed=11)
    tau3d = sample_tau_direct(chain, 2, R, seed=12)
    tau3r = sample_tau_representation(chain, 2, R, seed=13)
    d2 = ks_distance(tau3d.values, tau3r.values)
    cens = tau2.censored_fraction + tau3d.censored_fraction + tau3r.censored_fraction
    ok = d1 < thr and rep.holds and d2 < thr and cens == 0
    record(9, ok, f"KS(tau_2, theta_2)={d1:.4f}, KS(tau_3 direct, representation)={d2:.4f} "
                  f"(threshold {thr:.4f}); bound on 20 points: max excess "
                  f"{np.max(rep.excess):+.2f} SE")


def test_criterion_10_closed_forms():
    b11 = binary_fission_chain([(1, 1)])
    b12 = binary_fission_chain([(1, 2)])
    l0 = laplace_tau(b11, 1, 0.0).value
    mc = Moments().push_many(sample_tau_direct(b11, 1, 100_000, seed=14).values)
    e11 = expected_tau(b11, 1)
    e12 = expected_tau(b12, 1)
    checks = {
        "L(0)=1": abs(l0 - 1) <= 1e-12,
        "MC ln2": abs(mc.mean - math.log(2)) <= 3 * mc.se,
        "quad ln2": abs(e11.quadrature - math.log(2)) <= 1e-9,
        "quad ln1.5": abs(e12.quadrature - math.log(1.5)) <= 1e-9,
        "printed flagged": not e12.stated_supported,
    }
    record(10, all(checks.values()),
           f"L(0)-1={l0 - 1:.1e}; MC E tau={mc.mean:.4f}+-{mc.se:.4f}; "
           f"B(1,2) quadrature={e12.quadrature:.10f}, printed={e12.stated:.4f} "
           f"(supported={e12.stated_supported}); " + ", ".join(k for k, v in checks.items() if not v))


def test_criterion_11_ladder():
    t0 = time.perf_counter()
    models = [binary_fission_chain([(1, 1), (1, r)]) for r in (10, 100, 1000)]
    rep = ratio_convergence(models, 2, 20_000, seed=15)
    p = [r.exceed[0.1] for r in rep.rungs]
    secs = time.perf_counter() - t0
    ok = all(b < a for a, b in zip(p, p[1:])) and p[-1] < 0.05 and secs < 300
    record(11, ok, "P(|tau_3/sum theta - 1| > 0.1) = " + ", ".join(f"{v:.4f}" for v in p)
           + f"; P(A_3) at 1/10 = {rep.rungs[0].single_birth[2]:.3f}; runtime={secs:.1f}s")


def _snapshot(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "runtime.json"}


def test_criterion_12_determinism(tmp_path):
    experiments = [
        ["simulate-discrete", "--model", "diamond", "--x", "1,1", "--reps", "5000"],
        ["growth", "--model", "triangle", "--rates", "2,1", "--grid", "3,4", "--reps", "3000"],
        ["emergence", "tau", "--model", "bf:1,1;1,5", "--target", "2", "--reps", "3000"],
    ]
    same = []
    for n, argv in enumerate(experiments):
        outs = []
        for w in (1, 3):
            d = tmp_path / f"{n}-{w}"
            assert run(argv + ["--seed", "12", "--workers", str(w), "--out", str(d)]) == 0
            outs.append(_snapshot(d))
        same.append(outs[0] == outs[1])
    record(12, all(same), f"byte-identical outputs for workers=1 vs 3: {same}")
