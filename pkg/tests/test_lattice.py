import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mutforest.lattice import (LawError, ProgenyLaw, SparsePmf, classify_pattern, condition_AB,
                               convolve, convolve_power, law_from_lists, mean_report, perron,
                               shifted_step_law)
from conftest import laws, pmfs

P = SparsePmf(2, {(0, 0): .5, (2, 0): .3, (1, 1): .2})


def close(a: SparsePmf, b: SparsePmf, tol=1e-12):
    keys = set(a.entries) | set(b.entries)
    return all(abs(float(a(k)) - float(b(k))) < tol for k in keys)


def test_convolution_hand_values():
    pp = convolve(P, P)
    assert pp((1, 1)) == pytest.approx(0.2, abs=1e-15)
    assert pp((2, 2)) == pytest.approx(0.04, abs=1e-15)
    assert close(convolve(SparsePmf.delta((0, 0)), P), P)


def test_convolution_dimension_mismatch():
    with pytest.raises(LawError):
        convolve(P, SparsePmf.delta((0,)))


def test_sparse_pmf_validation():
    with pytest.raises(LawError):
        SparsePmf(2, {(0, 0): 0.5})
    with pytest.raises(LawError):
        SparsePmf(2, {(0, -1): 1.0})
    with pytest.raises(LawError):
        SparsePmf(2, {(0, 0, 0): 1.0})
    assert len(SparsePmf(1, {(0,): 1.0, (1,): 0.0})) == 1


@given(st.data())
def test_convolution_commutative_associative(data):
    d = data.draw(st.integers(1, 3))
    a, b, c = (data.draw(pmfs(d)) for _ in range(3))
    assert close(convolve(a, b), convolve(b, a))
    assert close(convolve(convolve(a, b), c), convolve(a, convolve(b, c)))
    assert float(convolve(a, b).mass()) == pytest.approx(1.0, abs=1e-12)


@given(st.data())
@settings(max_examples=30)
def test_power_mass_and_agreement(data):
    d = data.draw(st.integers(1, 2))
    p = data.draw(pmfs(d, max_support=3, max_child=2))
    n = data.draw(st.integers(0, 20))
    pw = convolve_power(p, n)
    assert float(pw.pmf.mass()) == pytest.approx(1.0, abs=1e-12)
    naive = SparsePmf.delta((0,) * d)
    for _ in range(n):
        naive = convolve(naive, p)
    assert close(pw.pmf, naive, 1e-12)


def test_power_cap_reports_lost_mass():
    p = SparsePmf(1, {(0,): .5, (1,): .5})
    pw = convolve_power(p, 4, cap=(2,))
    assert pw.truncated_mass == pytest.approx(5 / 16, abs=1e-15)
    assert float(pw.pmf.mass()) + pw.truncated_mass == pytest.approx(1.0, abs=1e-15)


def test_exact_mode_power():
    from fractions import Fraction
    p = SparsePmf(1, {(0,): .5, (2,): .5}).to_exact()
    pw = convolve_power(p, 3).pmf
    assert pw((2,)) == Fraction(3, 8)
    assert pw.mass() == 1


def test_shifted_step_examples(nu_diamond):
    s = shifted_step_law(nu_diamond, 0)
    assert s((-1, 0)) == 0.5 and s((0, 1)) == 0.2 and s((1, 0)) == 0.3


@given(laws())
def test_shifted_step_mass_and_mean(nu):
    m = nu.mean_matrix()
    for i in range(nu.dim):
        s = shifted_step_law(nu, i)
        assert s.mass() == pytest.approx(1.0, abs=1e-12)
        assert s.mean()[i] == pytest.approx(m[i, i] - 1, abs=1e-12)


def test_mean_report_diamond(nu_diamond):
    r = mean_report(nu_diamond)
    assert np.allclose(r.mean_matrix, [[.8, .2], [.1, .6]], atol=1e-15)
    assert r.spectral_radius == pytest.approx((1.4 + math.sqrt(0.12)) / 2, abs=1e-12)
    assert r.spectral_radius == pytest.approx(0.87321, abs=1e-5)
    assert r.criticality == "subcritical" and r.primitive and r.irreducible
    assert r.diag_subunit == (True, True) and r.xlogx_ok


def test_degenerate_single_child_is_singular():
    r = mean_report(law_from_lists({(1,): 1.0}))
    assert r.criticality == "critical"
    assert not r.non_singular


@given(laws())
@settings(max_examples=60)
def test_perron_residuals(nu):
    m = nu.mean_matrix()
    irr, prim = classify_pattern(m)
    if not prim:
        return
    rho, u, v = perron(m)
    assert np.max(np.abs(m @ u - rho * u)) < 1e-10
    assert np.max(np.abs(v @ m - rho * v)) < 1e-10
    assert u.sum() == pytest.approx(1, abs=1e-10) and u @ v == pytest.approx(1, abs=1e-10)
    assert np.all(u > 0) and np.all(v > 0)
    assert rho == pytest.approx(max(abs(np.linalg.eigvals(m))), rel=1e-9, abs=1e-12)


def test_pattern_classification():
    assert classify_pattern(np.array([[0, 1], [1, 0]])) == (True, False)
    assert classify_pattern(np.array([[1, 1], [1, 0]])) == (True, True)
    assert classify_pattern(np.array([[1, 1], [0, 1]])) == (False, False)


def test_condition_ab(nu_diamond):
    assert condition_AB(nu_diamond, 0) == "A"
    assert condition_AB(law_from_lists({(3, 0): 1}, {(0, 0): 1}), 0) == "B"
    assert condition_AB(law_from_lists({(2, 1): 1}, {(0, 0): 1}), 0) == "neither"


def test_json_roundtrip_and_rejection(tmp_path, nu_triangle):
    doc = nu_triangle.with_rates((2, 1)).to_dict()
    assert ProgenyLaw.from_dict(json.loads(json.dumps(doc))) == nu_triangle.with_rates((2, 1))
    bad = {"d": 1, "laws": [{"entries": [{"k": [0], "p": 0.5}]}]}
    with pytest.raises(LawError):
        ProgenyLaw.from_dict(bad)
    neg = {"d": 1, "laws": [{"entries": [{"k": [0], "p": 1.5}, {"k": [1], "p": -0.5}]}]}
    with pytest.raises(LawError):
        ProgenyLaw.from_dict(neg)
    slack = {"d": 1, "laws": [{"entries": [{"k": [0], "p": 0.5 + 5e-10}, {"k": [1], "p": 0.5}]}]}
    assert ProgenyLaw.from_dict(slack)[0].mass() == pytest.approx(1, abs=1e-15)


def test_continuous_time_ready(nu_triangle, nu_diamond):
    assert nu_triangle.continuous_time_ready()
    assert law_from_lists({(1,): .5, (0,): .5}).continuous_time_ready() is False
