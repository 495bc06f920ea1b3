import json
import math
from dataclasses import replace

import numpy as np
import pytest

from shgsim import algebra as alg
from shgsim.algebra import enumerate_basis, monomial_matrix
from shgsim.heisenberg import (
    AmplitudeSystem,
    CouplingTerm,
    CoverageError,
    GeneratorError,
    ProcessIndex,
    enumerate_processes,
    generate_system,
    hierarchy_violations,
    integrate_amplitudes,
    realize_operator,
    realize_operators,
    reference_mismatches,
    reference_term,
    solve_amplitudes,
    truncated_expansion,
)
from shgsim.schrodinger import build_propagator
from shgsim.verify import closed_form_amplitudes

P = ProcessIndex
f011, f112, f123 = P(1, 0, 1, 1), P(1, 1, 1, 2), P(1, 1, 2, 3)
g011, g022 = P(2, 0, 1, 1), P(2, 0, 2, 2)


# -- process indices -------------------------------------------------------------


def brute_force_processes(osc, M_max):
    """All normally ordered monomials lowering the energy by ``osc`` with i + 2j <= M_max."""
    out = set()
    for i in range(2 * M_max + 3):
        for j in range(M_max + 1):
            for k in range(2 * M_max + 5):
                for l in range(M_max + 3):
                    if 2 * l + k - 2 * j - i == osc and i + 2 * j <= M_max:
                        out.add((i, j, k, l))
    return out


def test_lowest_f_process():
    assert enumerate_processes(0, -1) == [f011]
    assert f011.exponents == (0, 0, 1, 0)


def test_lowest_g_processes():
    g = [p for p in enumerate_processes(0, 0) if p.osc == 2]
    assert g == [g011, g022]
    assert g011.exponents == (0, 0, 0, 1)
    assert g022.exponents == (0, 0, 2, 0)


def test_first_excited_f_processes():
    f1 = [p for p in enumerate_processes(1, -1) if p.M == 1]
    assert f1 == [f112, f123]
    assert f112.exponents == (1, 0, 0, 1)
    assert f123.exponents == (1, 0, 2, 0)


@pytest.mark.parametrize("M_max", range(0, 7))
def test_enumeration_matches_brute_force(M_max):
    procs = enumerate_processes(M_max, M_max)
    for osc in (1, 2):
        got = [p.exponents for p in procs if p.osc == osc]
        assert len(got) == len(set(got))
        assert set(got) == brute_force_processes(osc, M_max)


@pytest.mark.parametrize("M_max", range(0, 7))
def test_index_invariants(M_max):
    for p in enumerate_processes(M_max, M_max):
        i, j, k, l = p.exponents
        assert min(p.exponents) >= 0
        assert 2 * l + k - 2 * j - i == p.osc
        assert P.from_exponents(p.osc, p.exponents) == p
        lo = p.M // 2 + 1 if p.osc == 1 else (p.M + 1) // 2 + 1
        assert lo <= p.m <= p.M + p.osc
        assert (p.M + 1) // 2 + p.m <= p.R <= p.M + p.m


def test_enumeration_is_sorted():
    procs = enumerate_processes(5, 4)
    assert procs == sorted(procs)


def test_invalid_process_rejected():
    with pytest.raises(GeneratorError):
        P(1, 1, 1, 1)  # would need (a1^dag)^-1
    with pytest.raises(GeneratorError):
        P.from_exponents(1, (0, 0, 0, 1))


# -- generated system ----------------------------------------------------------------


def system_table(system):
    return {t: {(x.source1, x.source2): x.constant for x in terms}
            for t, terms in system.coupling_terms.items()}


def test_M0_system_is_constant():
    s = generate_system(0, 1.0)
    assert s.index_table == (f011,)
    assert s.coupling_terms[f011] == ()


@pytest.mark.parametrize("g", [1.0, 0.7 + 0.3j])
def test_M1_system_matches_hand_derivation(g):
    gc = complex(g).conjugate()
    expected = {
        f011: {},
        f112: {(f011, g011): 2j * g},
        f123: {(f011, g022): 2j * g},
        g011: {(f011, f112): 1j * gc},
        g022: {(f011, f011): 1j * gc, (f011, f123): 1j * gc},
    }
    got = system_table(generate_system(1, g))
    assert got.keys() == expected.keys()
    for t in expected:
        assert got[t].keys() == expected[t].keys(), t
        for k in expected[t]:
            assert got[t][k] == pytest.approx(expected[t][k])


@pytest.mark.parametrize("M_max", range(0, 7))
def test_f011_never_driven(M_max):
    assert generate_system(M_max, 0.3 + 0.1j).coupling_terms[f011] == ()


@pytest.mark.parametrize("M_max", range(0, 6))
def test_hierarchy_and_closed_form_relations(M_max):
    s = generate_system(M_max, 1.0, validate=False)
    assert hierarchy_violations(s) == []
    assert reference_mismatches(s) == []


@pytest.mark.parametrize("M_max", range(1, 6))
def test_system_is_closed_and_bilinear(M_max):
    s = generate_system(M_max, 1.0)
    table = set(s.index_table)
    assert table == set(enumerate_processes(M_max, M_max - 1))
    for target, terms in s.coupling_terms.items():
        for term in terms:
            assert term.source1 in table and term.source2 in table
            assert term.source1.osc == 1
            assert term.source2.osc == (2 if target.osc == 1 else 1)


@pytest.mark.parametrize("M_max", range(1, 6))
def test_coupled_sets_share_m(M_max):
    """Within fixed (M, m), f_{M m .} couples only to g_{M-1, m, .} at the top level."""
    s = generate_system(M_max, 1.0)
    for target, terms in s.coupling_terms.items():
        for t in terms:
            if target.osc == 1 and t.source2.M == target.M - 1:
                assert t.source2.m == target.m
            if target.osc == 2:
                for src in (t.source1, t.source2):
                    if src.M == target.M + 1:
                        assert src.m == target.m


def test_hierarchy_checker_flags_bad_term():
    s = generate_system(1, 1.0)
    bad = dict(s.coupling_terms)
    bad[f112] = bad[f112] + (CouplingTerm(f123, g011, 1, 2j),)
    problems = hierarchy_violations(replace(s, coupling_terms=bad))
    assert any("exceeds" in p for p in problems)


def test_reference_checker_flags_bad_weight():
    s = generate_system(2, 1.0)
    target = next(t for t in s.index_table if s.coupling_terms[t])
    bad = dict(s.coupling_terms)
    bad[target] = (replace(bad[target][0], weight=bad[target][0].weight + 1),) + bad[target][1:]
    assert reference_mismatches(replace(s, coupling_terms=bad))


def test_reference_term_examples():
    assert reference_term(f112, f011, 0, 1) == (g011, 1)
    assert reference_term(g011, f011, 1, 1) == (f112, 1)
    assert reference_term(g022, f011, 0, 1) == (f011, 1)


def test_generator_rejects_negative_cutoff():
    with pytest.raises(ValueError):
        generate_system(-1, 1.0)


# -- serialization ----------------------------------------------------------------------


def test_document_round_trip():
    s = generate_system(3, 0.7 + 0.3j)
    doc = json.loads(s.to_json())
    back = AmplitudeSystem.from_document(doc)
    assert back.index_table == s.index_table
    assert system_table(back) == system_table(s)
    assert back.to_json() == s.to_json()


def test_document_field_order():
    doc = json.loads(generate_system(1, 1.0).to_json())
    assert list(doc) == ["schema_version", "M_max", "gamma", "amplitudes", "targets"]
    assert doc["schema_version"] == 1
    term = doc["targets"][1]["terms"][0]
    assert list(term) == ["source1", "conjugate_source1", "source2", "weight", "constant"]
    assert term == {"source1": {"osc": 1, "M": 0, "m": 1, "R": 1}, "conjugate_source1": True,
                    "source2": {"osc": 2, "M": 0, "m": 1, "R": 1}, "weight": 1,
                    "constant": {"re": 0.0, "im": 2.0}}


def test_document_is_deterministic():
    assert generate_system(4, 0.2 - 0.9j).to_json() == generate_system(4, 0.2 - 0.9j).to_json()


def test_document_version_checked():
    doc = generate_system(1, 1.0).to_document()
    doc["schema_version"] = 99
    with pytest.raises(ValueError):
        AmplitudeSystem.from_document(doc)


# -- integration --------------------------------------------------------------------------


@pytest.mark.parametrize("g", [1.0, 0.7 + 0.3j])
def test_closed_form_amplitudes(g):
    sol = integrate_amplitudes(generate_system(1, g), 10.0)
    t = np.linspace(0, 10, 301)
    for p, exact in closed_form_amplitudes(g, t).items():
        np.testing.assert_allclose(sol.amplitude(p, t), exact, atol=1e-8)


def test_initial_values_exact():
    sol = integrate_amplitudes(generate_system(3, 0.7 + 0.3j), 2.0)
    np.testing.assert_array_equal(sol(0.0), sol.system.initial_values)
    np.testing.assert_array_equal(sol(np.array([0.0, 1.0]))[:, 0], sol.system.initial_values)


def test_closed_forms_at_every_accepted_step():
    rtol = 1e-10
    g = 0.7 + 0.3j
    sol = integrate_amplitudes(generate_system(2, g), 10.0, rtol=rtol)
    for p, exact in closed_form_amplitudes(g, sol.time_grid).items():
        got = sol.values[sol.system.position[p]]
        assert np.max(np.abs(got - exact)) <= 10 * rtol


def test_higher_M_does_not_disturb_lower_amplitudes():
    g = 0.7 + 0.3j
    small = integrate_amplitudes(generate_system(1, g), 5.0)
    big = integrate_amplitudes(generate_system(5, g), 5.0)
    t = np.linspace(0, 5, 51)
    for p in small.system.index_table:
        np.testing.assert_allclose(big.amplitude(p, t), small.amplitude(p, t), atol=1e-10)


def test_finite_difference_matches_rhs():
    s = generate_system(4, 0.7 + 0.3j)
    sol = integrate_amplitudes(s, 6.0)
    h = 1e-4
    for t in (0.5, 2.2, 4.9):
        fd = (sol(t + h) - sol(t - h)) / (2 * h)
        np.testing.assert_allclose(fd, s.rhs(sol(t)), atol=1e-6)


def test_zero_coupling_freezes_amplitudes():
    sol = integrate_amplitudes(generate_system(3, 0.0), 5.0)
    np.testing.assert_array_equal(sol(3.3), sol.system.initial_values)


def test_time_outside_range():
    sol = integrate_amplitudes(generate_system(1, 1.0), 1.0)
    with pytest.raises(CoverageError):
        sol(1.5)


def test_bad_arguments():
    s = generate_system(1, 1.0)
    with pytest.raises(ValueError):
        integrate_amplitudes(s, -1.0)
    with pytest.raises(ValueError):
        integrate_amplitudes(s, 1.0, rtol=0)


# -- realization -------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def sol6():
    return solve_amplitudes(6, 0.7 + 0.3j, 12.0)


@pytest.mark.parametrize("osc", [1, 2])
def test_realize_at_zero_is_bare_operator(sol6, osc):
    b = enumerate_basis(5)
    np.testing.assert_array_equal(realize_operator(osc, sol6, 0.0, b),
                                  monomial_matrix(alg.annihilator(osc).monomials()[0], b))


@pytest.mark.parametrize("g", [1.0, 0.7 + 0.3j])
def test_realize_K2_entries(g):
    sol = integrate_amplitudes(generate_system(1, g), 8.0)
    b = enumerate_basis(2)
    w = math.sqrt(2) * abs(g)
    for t in np.linspace(0, 8, 17):
        A2 = realize_operator(2, sol, t, b)
        A1 = realize_operator(1, sol, t, b)
        assert A2[b.index((0, 0)), b.index((0, 1))] == pytest.approx(math.cos(w * t), abs=1e-9)
        assert A1[b.index((1, 0)), b.index((0, 1))] == pytest.approx(
            1j * math.sqrt(2) * g / abs(g) * math.sin(w * t), abs=1e-9)


@pytest.mark.parametrize("K", range(1, 7))
def test_realized_operators_match_schrodinger(sol6, K):
    b = enumerate_basis(K)
    prop = build_propagator(K, 0.7 + 0.3j)
    for osc in (1, 2):
        A = alg.operator_matrix(alg.annihilator(osc), b)
        for t in (0.7, 4.1, 11.9):
            U = prop.unitary(t)
            np.testing.assert_allclose(realize_operator(osc, sol6, t, b), U.conj().T @ A @ U, atol=1e-8)


@pytest.mark.parametrize("K", range(0, 7))
def test_grading_exact(sol6, K):
    b = enumerate_basis(K)
    labels = b.block_labels
    for osc in (1, 2):
        for M in realize_operators(osc, sol6, np.linspace(0, 12, 7), b):
            allowed = labels[:, None] == labels[None, :] - osc
            assert np.all(M[~allowed] == 0)


def test_coverage_error():
    sol = integrate_amplitudes(generate_system(1, 1.0), 1.0)
    with pytest.raises(CoverageError):
        realize_operator(1, sol, 0.5, enumerate_basis(3))
    with pytest.raises(CoverageError):
        truncated_expansion(1, sol, 0.5, 2)


def test_truncated_expansion_a2():
    g = 0.7 + 0.3j
    sol = integrate_amplitudes(generate_system(1, g), 3.0)
    ex = truncated_expansion(2, sol, 1.3, 0)
    assert set(ex.terms) == {(0, 0, 0, 1), (0, 0, 2, 0)}
    cf = closed_form_amplitudes(g, 1.3)
    assert ex.coefficient((0, 0, 0, 1)) == pytest.approx(cf[g011], abs=1e-10)
    assert ex.coefficient((0, 0, 2, 0)) == pytest.approx(cf[g022], abs=1e-10)


def test_truncated_expansion_a1():
    sol = integrate_amplitudes(generate_system(1, 1.0), 3.0)
    ex = truncated_expansion(1, sol, 0.9, 1)
    assert set(ex.terms) == {(0, 0, 1, 0), (1, 0, 0, 1), (1, 0, 2, 0)}


def test_truncated_commutator_deviates_from_identity():
    g = 1.0
    sol = integrate_amplitudes(generate_system(1, g), 3.0)
    t = 0.8
    A2 = truncated_expansion(2, sol, t, 0)
    comm = alg.commutator(A2, A2.adjoint())
    s2 = math.sin(math.sqrt(2) * t) ** 2
    assert comm.coefficient((0, 0, 0, 0)) == pytest.approx(1, abs=1e-9)
    assert comm.coefficient((1, 0, 1, 0)) == pytest.approx(2 * s2, abs=1e-9)
    assert alg.max_coefficient_difference(
        comm, alg.OperatorExpansion({(0, 0, 0, 0): 1, (1, 0, 1, 0): 2 * s2})) < 1e-9


def test_intuitive_and_indexed_labels_agree():
    """The intuitive f1/g1 pair and the indexed f112/g011 are the same functions."""
    g = 0.7 + 0.3j
    t = np.linspace(0, 5, 11)
    w = math.sqrt(2) * abs(g)
    f1 = 1j * math.sqrt(2) * g / abs(g) * np.sin(w * t)
    g1 = np.cos(w * t)
    cf = closed_form_amplitudes(g, t)
    np.testing.assert_allclose(cf[f112], f1, atol=1e-15)
    np.testing.assert_allclose(cf[g011], g1, atol=1e-15)
    # and they solve df1/dt = 2 i g g1, dg1/dt = i conj(g) f1
    h = 1e-6
    up, dn = closed_form_amplitudes(g, t + h), closed_form_amplitudes(g, t - h)
    np.testing.assert_allclose((up[f112] - dn[f112]) / (2 * h), 2j * g * g1, atol=1e-8)
    np.testing.assert_allclose((up[g011] - dn[g011]) / (2 * h), 1j * np.conj(g) * f1, atol=1e-8)
