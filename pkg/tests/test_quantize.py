"""Tests for coordinate classification, Hamiltonian assembly, and eigensolvers."""

import math
import types

import numpy as np
import pytest
import scipy.sparse as sp

from plaqsim import circuit as C
from plaqsim import quantize as qz

RNG = np.random.default_rng(20260825)


def transmon_graph(e_j: float = 5.0, c_sh: float = 100.0) -> qz.CircuitGraph:
    """Single junction shunted by a capacitor; one compact node."""
    return qz.CircuitGraph(
        n_nodes=2,
        n_fluxes=0,
        capacitors=((1, 0, c_sh),),
        inductors=(),
        cosines=(qz.CosineBranch(1, 0, 1, amp=-e_j),),
        node_labels=((1, "shunt"),),
    )


def lc_graph(l_ph: float = 100.0, c_ff: float = 100.0) -> qz.CircuitGraph:
    e_l = C.EL_GHZ_PER_PH / l_ph
    return qz.CircuitGraph(
        n_nodes=2,
        n_fluxes=0,
        capacitors=((1, 0, c_ff),),
        inductors=(qz.InductiveBranch(1, 0, e_l),),
        cosines=(),
    )


def reduced_single(alpha: float = 0.02) -> C.ValidatedCircuit:
    from plaqsim import plaquette as P

    spec = C.CircuitSpec(
        plaquettes=(
            C.PlaquetteSpec(e_j=1.65, e_c=3.67, e_l=1.11, e_cl=6.36,
                            alpha=alpha, c_int=1.0),
        ),
        c_sh=1190.0, c_isl=(), l_extra=5500.0, c_extra=2.0,
    )
    return P.build_structureless(C.validate_circuit(spec), renorm=2.0)


# ---------------------------------------------------------------------------
# coordinate classification


def test_classify_transmon_limit_single_cyclic():
    coords = qz.classify_coordinates(transmon_graph())
    assert coords.kinds == ("cyclic",)


def test_classify_lc_loop_single_oscillator():
    coords = qz.classify_coordinates(lc_graph())
    assert coords.kinds == ("oscillator",)
    # 100 pH / 100 fF resonates at 1/(2*pi*sqrt(LC)) = 50.33 GHz
    f_lc = 1.0 / (2 * math.pi * math.sqrt(100e-12 * 100e-15)) / 1e9
    assert math.isclose(coords.oscillator_freqs[0], f_lc, rel_tol=1e-9)


def test_classify_structured_single_frustration_circuit():
    # one structured plaquette in the series-LC chain: two charge clusters
    # (shunt island and the global mode), the rest oscillators
    coords = qz.classify_coordinates(C.validate_circuit(C.preset("table-s1-p2")))
    assert coords.n_cyclic == 2
    assert coords.n_coordinates == 5
    assert coords.kinds[:2] == ("cyclic", "cyclic")
    labels = set(coords.island_map.values())
    assert "shunt" in labels


def test_classify_reduced_triple_has_five_nodes():
    from plaqsim import plaquette as P

    red = P.build_structureless(
        C.validate_circuit(C.preset("optimal-xi")), renorm=2.0
    )
    graph = qz.as_graph(red)
    assert graph.n_nodes - 1 == 5  # active nodes after collapsing the arms
    coords = qz.classify_coordinates(red)
    assert coords.n_coordinates == 5


def test_classify_rejects_singular_capacitance():
    bad = qz.CircuitGraph(
        n_nodes=2, n_fluxes=0, capacitors=(),
        inductors=(), cosines=(qz.CosineBranch(1, 0, 1, amp=-1.0),),
    )
    with pytest.raises(qz.QuantizeError):
        qz.classify_coordinates(bad)


# ---------------------------------------------------------------------------
# Hamiltonian assembly


def test_transmon_charge_basis_matrix_elements():
    e_j, c_sh = 0.8, 100.0
    op = qz.assemble_hamiltonian(
        transmon_graph(e_j=e_j, c_sh=c_sh), C.BiasPoint(), qz.Truncation((7,))
    )
    h = op.matrix.toarray()
    e_c = C.EC_GHZ_PER_FF / c_sh
    n = np.arange(-3, 4)
    assert np.allclose(np.diag(h).real, e_c * n**2, atol=1e-12)
    off = np.diag(h, k=1)
    assert np.allclose(off, -e_j / 2.0, atol=1e-12)  # <n|cos phi|n+1> = 1/2
    assert np.allclose(np.diag(h, k=2), 0.0, atol=1e-12)


def test_assembled_hamiltonian_is_hermitian():
    circ = C.validate_circuit(C.preset("table-s1-p2"))
    bias = C.BiasPoint.for_circuit(circ, flux=0.37, charge_sh=0.21)
    op = qz.assemble_hamiltonian(circ, bias, qz.Truncation((5, 5, 4, 3, 3)))
    assert op.is_hermitian
    assert op.hermiticity_defect() < 1e-12


def test_dimension_cap_enforced():
    circ = C.validate_circuit(C.preset("table-s1-p2"))
    bias = C.BiasPoint.for_circuit(circ)
    with pytest.raises(qz.QuantizeError, match="cap"):
        qz.assemble_hamiltonian(circ, bias, qz.Truncation((5, 5, 4, 3, 3)),
                                dim_cap=100)


def test_structured_single_matches_dense_oracle():
    # full assembled matrix at frustration, small enough to diagonalize densely
    circ = C.validate_circuit(C.preset("table-s1-p2"))
    bias = C.BiasPoint.for_circuit(circ, flux=0.5)
    op = qz.assemble_hamiltonian(circ, bias, qz.Truncation((5, 5, 6, 4, 4)))
    assert op.dimension == 2400
    dense = np.linalg.eigvalsh(op.matrix.toarray())
    res = qz.lowest_eigenpairs(op, 8, want_vectors=False, dense_threshold=16)
    scale = abs(dense[0])
    assert np.all(np.abs(res.eigenvalues - dense[:8]) < 1e-9 * scale)


def test_factored_operator_agrees_with_sparse_matrix():
    red = reduced_single()
    bias = C.BiasPoint.for_circuit(red, flux=0.5, charge_sh=0.13)
    trunc = qz.Truncation((5, 9, 5))
    a = qz.assemble_hamiltonian(red, bias, trunc, total_charge=0)
    b = qz.assemble_factored(red, bias, trunc, total_charge=0)
    vec = RNG.standard_normal(a.dimension) + 1j * RNG.standard_normal(a.dimension)
    ref = a.matrix @ vec
    out = b.matvec(vec)
    assert np.allclose(out, ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())


# ---------------------------------------------------------------------------
# eigensolver


def _stub_operator(matrix: np.ndarray):
    return types.SimpleNamespace(
        dimension=matrix.shape[0],
        matrix=sp.csr_matrix(matrix),
        trunc=types.SimpleNamespace(states=(matrix.shape[0],)),
    )


def test_lowest_eigenpairs_known_diagonal():
    res = qz.lowest_eigenpairs(_stub_operator(np.diag([3.0, 1.0, 2.0])), 2)
    assert np.allclose(res.eigenvalues, [1.0, 2.0])


def test_lowest_eigenpairs_random_sparse_vs_dense():
    n = 500
    a = RNG.standard_normal((n, n)) + 1j * RNG.standard_normal((n, n))
    h = (a + a.conj().T) / 2.0
    h[np.abs(h) < 1.5] = 0.0  # sparsify
    h = (h + h.conj().T) / 2.0
    dense = np.linalg.eigvalsh(h)
    res = qz.lowest_eigenpairs(_stub_operator(h), 8, want_vectors=False,
                               dense_threshold=100)
    assert np.allclose(res.eigenvalues, dense[:8], atol=1e-9 * np.abs(dense).max())


def test_lowest_eigenpairs_full_spectrum_small_case():
    n = 50
    a = RNG.standard_normal((n, n))
    h = (a + a.T) / 2.0
    res = qz.lowest_eigenpairs(_stub_operator(h), n)
    assert np.allclose(res.eigenvalues, np.linalg.eigvalsh(h), atol=1e-10)


def test_lowest_eigenpairs_rejects_bad_k():
    op = _stub_operator(np.eye(3))
    with pytest.raises(qz.QuantizeError):
        qz.lowest_eigenpairs(op, 0)
    with pytest.raises(qz.QuantizeError):
        qz.lowest_eigenpairs(op, 4)


# ---------------------------------------------------------------------------
# charge operators


def test_charge_expectation_vanishes_by_parity():
    graph = transmon_graph(e_j=5.0)
    trunc = qz.Truncation((21,))
    val = qz.charge_matrix_element(graph, C.BiasPoint(), trunc, 0, 0,
                                   label="shunt")
    assert val < 1e-10
    odd = qz.charge_matrix_element(graph, C.BiasPoint(), trunc, 0, 1,
                                   label="shunt")
    assert odd > 0.1


def test_charge_diagonal_element_is_real_and_finite():
    red = reduced_single()
    bias = C.BiasPoint.for_circuit(red, flux=0.5)
    val = qz.charge_matrix_element(red, bias, qz.Truncation((5, 9, 5)), 1, 1,
                                   label="shunt", total_charge=0)
    assert math.isfinite(val)


# ---------------------------------------------------------------------------
# spectrum invariants


def _transmon_levels(ng: float, k: int = 4) -> np.ndarray:
    res = qz.spectrum(transmon_graph(e_j=5.0), C.BiasPoint(charge_sh=ng),
                      qz.Truncation((21,)), k)
    return res.eigenvalues


def test_offset_charge_periodicity_exact_window():
    a = _transmon_levels(0.17)
    b = _transmon_levels(1.17)
    assert np.allclose(a, b, atol=1e-9)


def test_flux_period_invariance():
    red = reduced_single()
    trunc = qz.Truncation((5, 9, 5))
    lo = qz.spectrum(red, C.BiasPoint.for_circuit(red, flux=0.23), trunc, 4,
                     total_charge=0).eigenvalues
    hi = qz.spectrum(red, C.BiasPoint.for_circuit(red, flux=1.23), trunc, 4,
                     total_charge=0).eigenvalues
    assert np.allclose(lo, hi, atol=1e-9)


def test_flux_mirror_symmetry_at_frustration_for_symmetric_arms():
    red = reduced_single(alpha=0.0)
    trunc = qz.Truncation((5, 9, 5))
    delta = 0.01
    plus = qz.spectrum(red, C.BiasPoint.for_circuit(red, flux=0.5 + delta),
                       trunc, 4, total_charge=0).eigenvalues
    minus = qz.spectrum(red, C.BiasPoint.for_circuit(red, flux=0.5 - delta),
                        trunc, 4, total_charge=0).eigenvalues
    assert np.allclose(plus, minus, rtol=1e-6)


def test_ground_energy_variationally_monotone_in_truncation():
    red = reduced_single()
    bias = C.BiasPoint.for_circuit(red, flux=0.5)
    energies = []
    for states in [(3, 5, 3), (5, 7, 4), (7, 9, 5), (9, 11, 6)]:
        res = qz.spectrum(red, bias, qz.Truncation(states), 1, total_charge=0)
        energies.append(res.eigenvalues[0])
    diffs = np.diff(energies)
    assert np.all(diffs <= 1e-10)


def test_eigenvalues_ascending_and_metadata():
    red = reduced_single()
    bias = C.BiasPoint.for_circuit(red, flux=0.5)
    res = qz.spectrum(red, bias, qz.Truncation((5, 9, 5)), 5, total_charge=0)
    assert np.all(np.diff(res.eigenvalues) >= -1e-12)
    assert res.metadata["truncation"] == (5, 9, 5)
    assert res.transition(0, 1) == pytest.approx(
        res.eigenvalues[1] - res.eigenvalues[0]
    )
