import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mutforest.lattice import LawError, law_from_lists, mean_report
from mutforest.mutation_law import (InconsistentQuery, JointMutationQuery, bareiss_det,
                                    consistent_queries, eigen_relation_check, joint_mutation_pmf,
                                    kemperman_mass, kemperman_mass_exact, kemperman_masses,
                                    mean_identity_residual, mutation_law, mutation_mean_report,
                                    mutation_progeny, mutation_progeny_exact)
from conftest import subcritical_laws

Q_DIAMOND = (1 - math.sqrt(1 - 4 * 0.3 * 0.5)) / (2 * 0.3)  # smallest root of q = .5 + .3 q^2


def cluster_pgf_coeffs(a0, a2, a_cross, n, keeps_parent_type=True):
    """Coefficients of F(s) = a0 + a2 F^2 + a_cross s F (or a_cross s), by power-series iteration."""
    f = np.zeros(n)
    for _ in range(4000):
        sq = np.convolve(f, f)[:n]
        shifted = np.concatenate([[0.0], f[:-1] if keeps_parent_type else np.eye(1, n - 1)[0]])
        new = a2 * sq + a_cross * shifted
        new[0] += a0
        if np.max(np.abs(new - f)) < 1e-16:
            break
        f = new
    return f


@pytest.fixture(scope="module")
def mu_diamond():
    from mutforest.models import diamond
    return mutation_law(diamond(), eps=1e-10)


def test_no_mutation_mass_matches_fixed_point(nu_diamond):
    t = mutation_progeny(nu_diamond, 0, 1e-8)
    assert t.pmf((0, 0)) == pytest.approx(Q_DIAMOND, abs=2e-5)
    assert t.pmf((0, 0)) == pytest.approx(0.6125741132772072, abs=1e-8)
    assert float(t.pmf.mass()) + t.truncation_error == pytest.approx(1.0, abs=1e-10)
    assert t.mode == "series" and t.converged


def test_whole_marginal_matches_cluster_generating_function(mu_diamond):
    f1 = cluster_pgf_coeffs(0.5, 0.3, 0.2, 12)
    f2 = cluster_pgf_coeffs(0.6, 0.3, 0.1, 12, keeps_parent_type=False)
    for k in range(12):
        assert mu_diamond[0]((0, k)) == pytest.approx(f1[k], abs=1e-9)
        assert mu_diamond[1]((k, 0)) == pytest.approx(f2[k], abs=1e-9)
    assert mu_diamond[0]((0, 1)) == pytest.approx(0.2 * Q_DIAMOND / (1 - 0.6 * Q_DIAMOND), abs=1e-9)
    assert mu_diamond[0]((0, 1)) == pytest.approx(0.193713, abs=1e-6)


def test_series_terms_and_exact_partial_sums(nu_diamond):
    terms = [mutation_progeny_exact(nu_diamond, 0, n)((0, 1)) for n in range(1, 6)]
    diffs = [terms[0]] + [b - a for a, b in zip(terms, terms[1:])]
    assert diffs == [0, Fraction(1, 10), 0, Fraction(9, 200), 0]
    t = mutation_progeny(nu_diamond, 0, 1e-8)
    assert t.pmf((0, 1)) >= float(terms[-1])


def test_kemperman_masses(nu_diamond):
    assert [kemperman_mass_exact(nu_diamond, 0, n) for n in (1, 2, 3)] == [
        Fraction(1, 2), Fraction(1, 10), Fraction(19, 200)]
    assert kemperman_mass(nu_diamond, 0, 3) == pytest.approx(0.095, abs=1e-15)
    km = kemperman_masses(nu_diamond, 0, 2000)
    assert km.sum() == pytest.approx(1.0, abs=1e-9)


def test_kemperman_sum_is_marginal_extinction():
    # type-1 marginal step law is supercritical: cluster extinction q = 1/3 for {0: 1/3, 2: 2/3}
    nu = law_from_lists({(0, 0): 1 / 3, (2, 0): 2 / 3}, {(0, 0): 1.0})
    assert kemperman_masses(nu, 0, 4000).sum() == pytest.approx(0.5, abs=1e-6)


def test_dirac_and_rejection():
    b = law_from_lists({(3, 0): 1.0}, {(0, 0): 1.0})
    t = mutation_progeny(b, 0)
    assert t.mode == "dirac" and t.pmf((0, 0)) == 1.0
    with pytest.raises(LawError):
        mutation_progeny(law_from_lists({(2, 1): 1.0}, {(0, 0): 1.0}), 0)
    with pytest.raises(ValueError):
        mutation_progeny(b, 1, eps=0)


def test_support_cap_reported(nu_diamond):
    t = mutation_progeny(nu_diamond, 0, 1e-8, cap=(0, 2))
    assert max(k[1] for k in t.pmf.support()) <= 2
    total = float(t.pmf.mass()) + t.truncation_error + t.support_error
    assert total == pytest.approx(1.0, abs=1e-10)


@given(subcritical_laws(d=2))
@settings(max_examples=20, deadline=None)
def test_mass_and_means(nu):
    r = mean_report(nu)
    rbar = mutation_mean_report(r)
    for i in range(2):
        # the missing tail carries mean of order (terms) x (truncation error), so eps is tight
        t = mutation_progeny(nu, i, 1e-12)
        assert float(t.pmf.mass()) + t.truncation_error == pytest.approx(1.0, abs=1e-10)
        assert all(k[i] == 0 for k in t.pmf.support())
        mean = t.pmf.mean()
        for j in range(2):
            if j != i:
                assert abs(mean[j] - rbar.matrix[i, j]) <= 3 * t.truncation_error + 1e-8


def test_mean_report_values(nu_diamond):
    rbar = mutation_mean_report(mean_report(nu_diamond))
    assert rbar.matrix[0, 1] == pytest.approx(1.0, abs=1e-15)
    assert rbar.matrix[1, 0] == pytest.approx(0.25, abs=1e-15)
    assert rbar.all_finite and rbar.matrix[0, 0] == 0


def test_infinite_entry_flagged():
    nu = law_from_lists({(0, 0): .25, (1, 1): .25, (2, 0): .5}, {(0, 0): 1.0})
    rbar = mutation_mean_report(mean_report(nu))
    assert rbar.infinite[0, 1] and not rbar.infinite[1, 0]
    assert rbar.moment_order[0] == 0.0


@given(st.integers(1, 4).flatmap(lambda d: subcritical_laws(d=d)))
@settings(max_examples=20)
def test_mean_identity(nu):
    r = mean_report(nu)
    rbar = mutation_mean_report(r)
    assert mean_identity_residual(r, rbar) < 1e-12


def scaled_law(a, target_rho):
    """Law with atoms 2 e_j whose mean matrix is a rescaled to spectral radius target_rho."""
    a = np.asarray(a, float)
    m = a * target_rho / max(abs(np.linalg.eigvals(a)))
    d = len(a)
    laws = []
    for i in range(d):
        ent = {tuple(2 if c == j else 0 for c in range(d)): m[i, j] / 2 for j in range(d)}
        ent[(0,) * d] = 1 - sum(ent.values())
        laws.append(ent)
    return law_from_lists(*laws)


A3 = [[.3, .5, .2], [.4, .1, .6], [.3, .3, .3]]


@pytest.mark.parametrize("rho", [0.7, 1.0, 1.3])
def test_criticality_transfer(rho):
    r = mean_report(scaled_law(A3, rho))
    rbar = mutation_mean_report(r)
    assert np.sign(round(r.spectral_radius - 1, 9)) == np.sign(round(rbar.spectral_radius - 1, 9))
    assert r.criticality == rbar.criticality


def test_eigen_relation_critical_three_types():
    r = mean_report(scaled_law(A3, 1.0))
    check = eigen_relation_check(r, mutation_mean_report(r))
    assert check.critical and check.holds


def test_eigen_relation_fails_off_criticality():
    r = mean_report(scaled_law(A3, 0.7))
    check = eigen_relation_check(r, mutation_mean_report(r))
    assert not check.holds


def test_two_type_mutation_matrix_is_periodic(nu_diamond):
    r = mean_report(nu_diamond)
    rbar = mutation_mean_report(r)
    assert rbar.irreducible and not rbar.primitive
    with pytest.raises(ValueError):
        eigen_relation_check(r, rbar)


@given(st.lists(st.lists(st.integers(-6, 6), min_size=4, max_size=4), min_size=4, max_size=4),
       st.integers(0, 4))
def test_bareiss_matches_float_det(rows, n):
    a = [r[:n] for r in rows[:n]]
    expect = round(np.linalg.det(np.array(a, float))) if n else 1
    assert bareiss_det(a) == expect


def test_joint_pmf_examples(mu_diamond):
    q = JointMutationQuery.from_cross((1, 0), [[0, 0], [0, 0]])
    assert joint_mutation_pmf(mu_diamond, q) == pytest.approx(Q_DIAMOND, abs=1e-9)
    q = JointMutationQuery.from_cross((1, 0), [[0, 1], [0, 0]])
    assert q.n == (1, 1)
    expect = mu_diamond[0]((0, 1)) * mu_diamond[1]((0, 0))
    assert joint_mutation_pmf(mu_diamond, q) == pytest.approx(expect, abs=1e-15)


def test_joint_pmf_rejects_inconsistent():
    with pytest.raises(InconsistentQuery, match="n_2"):
        JointMutationQuery((1, 0), (1, 2), ((0, 1), (0, 0)))
    with pytest.raises(InconsistentQuery):
        JointMutationQuery.from_cross((1, 0), [[0, -1], [0, 0]])


def test_joint_pmf_sums_below_one_and_increase(mu_diamond):
    totals = []
    for t in (2, 4, 6, 8):
        totals.append(sum(joint_mutation_pmf(mu_diamond, q) for q in consistent_queries((1, 0), t)))
    assert all(b >= a - 1e-15 for a, b in zip(totals, totals[1:]))
    assert totals[-1] <= 1.0 + 1e-12 and totals[-1] > 0.9


def test_joint_pmf_single_type():
    # d = 1 and a subcritical law: no mutations, so the only atom has probability mu(0)^x = 1
    mu = mutation_law(law_from_lists({(0,): .6, (2,): .4}), eps=1e-9)
    q = JointMutationQuery((3,), (3,), ((0,),))
    assert joint_mutation_pmf(mu, q) == pytest.approx(1.0, abs=1e-8)
