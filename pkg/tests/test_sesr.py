import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opendyn.errors import DegenerateDenominatorError, DimensionMismatchError, SolvabilityError
from opendyn.linalg import SIGMA_X, SIGMA_Z, random_hermitian
from opendyn.sesr import (
    CouplingDecomposition,
    HamiltonianSplit,
    PerturbationData,
    SesrBasis,
    build_sesr,
    check_degenerate_offdiagonals,
    diagonalize_degenerate_subspaces,
    energy_corrections,
    hamiltonian_redivision,
    improved_energies,
    operator_schmidt,
    perturbation_matrix,
)


def commuting_pair(rng, dim):
    """A random hermitian h and an operator diagonal in the same eigenbasis."""
    h = random_hermitian(dim, rng)
    _, v = np.linalg.eigh(h)
    s = v @ np.diag(rng.normal(size=dim)) @ v.conj().T
    return h, s


def test_build_sesr_diagonalizes_h_tot0(rng):
    hs, s = commuting_pair(rng, 2)
    he, b = commuting_pair(rng, 3)
    split = HamiltonianSplit(hs, he, [(s, b)], h_tot1=random_hermitian(6, rng))
    basis = build_sesr(split)
    d = basis.to_sesr(split.h_tot0())
    assert np.allclose(d, np.diag(basis.energies), atol=1e-10)
    assert np.allclose(np.sort(basis.energies), np.linalg.eigvalsh(split.h_tot0()))
    assert np.allclose(basis.basis_change, np.kron(basis.system_vectors, basis.env_vectors))
    assert basis.product_form


def test_non_commuting_coupling_is_rejected(rng):
    split = HamiltonianSplit(SIGMA_Z, np.diag([0.0, 1.0]), [(SIGMA_X, np.diag([1.0, -1.0]))])
    with pytest.raises(SolvabilityError):
        build_sesr(split)


def test_regrouping_rescues_a_split_coupling():
    # sigma_z (x) (B + C) + sigma_z (x) (-C): the individual B-terms do not commute with hE
    he = np.diag([0.0, 1.0])
    b = np.diag([1.0, 2.0])
    c = SIGMA_X
    split = HamiltonianSplit(SIGMA_Z, he, [(SIGMA_Z, b + c), (SIGMA_Z, -c)])
    basis = build_sesr(split)
    assert np.allclose(basis.to_sesr(split.h_tot0()), np.diag(basis.energies), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_operator_schmidt_reconstructs(ds, de, seed):
    rng = np.random.default_rng(seed)
    h = random_hermitian(ds * de, rng)
    terms = operator_schmidt(h, ds, de)
    assert np.allclose(CouplingDecomposition(tuple(terms)).operator(ds, de), h, atol=1e-10)
    for s, b in terms:
        assert np.allclose(s, s.conj().T) and np.allclose(b, b.conj().T)


def test_redivision_keeps_total_and_clears_diagonal(rng):
    hs, he = np.diag([0.0, 1.3]), np.diag([0.0, 0.4, 0.9])
    h1 = random_hermitian(6, rng, 0.1)
    split = HamiltonianSplit(hs, he, h_tot1=h1)
    basis = build_sesr(split)
    pert = perturbation_matrix(h1, basis)
    new_split, new_basis, new_pert = hamiltonian_redivision(split, basis, pert)
    assert np.allclose(new_split.h_total(), split.h_total())
    assert np.allclose(new_pert.h1_diag, 0)
    assert np.allclose(new_basis.energies, basis.energies + pert.h1_diag)
    assert np.allclose(new_basis.to_sesr(new_split.h_tot0()), np.diag(new_basis.energies), atol=1e-12)


def test_perturbation_matrix_dimension_check(rng):
    basis = SesrBasis.from_factors(np.eye(2), np.eye(2), np.zeros(4))
    with pytest.raises(DimensionMismatchError):
        perturbation_matrix(np.eye(6), basis)


def test_degenerate_subspace_rotation_removes_couplings(rng):
    e = np.array([0.0, 0.0, 1.0, 1.0])
    basis = SesrBasis.from_factors(np.eye(2), np.eye(2), e)
    h1 = random_hermitian(4, rng, 0.2)
    pert = perturbation_matrix(h1, basis)
    assert not check_degenerate_offdiagonals(basis, pert)
    rb, rp = diagonalize_degenerate_subspaces(basis, pert)
    assert check_degenerate_offdiagonals(rb, rp)
    assert not rb.product_form
    # same operator, new basis
    assert np.allclose(rb.from_sesr(rp.matrix), h1)


def _scaling_errors(order, lam, e, g):
    pert = PerturbationData(np.zeros(e.size), lam * g, e.copy(), 1)
    got = improved_energies(pert, e, order)
    exact = np.linalg.eigvalsh(np.diag(e) + lam * g)
    return np.max(np.abs(np.sort(got) - exact))


@pytest.mark.parametrize("order", [2, 3, 4, 5])
def test_improved_energy_error_scales_with_order(order, rng):
    e = np.array([0.0, 1.1, 2.5, 3.2, 4.9])
    g = random_hermitian(5, rng)
    np.fill_diagonal(g, 0)
    big, small = _scaling_errors(order, 0.04, e, g), _scaling_errors(order, 0.02, e, g)
    expected = 2.0 ** (order + 1)
    assert 0.6 * expected < big / small < 1.6 * expected


def test_second_order_correction_closed_form():
    e = np.array([0.0, 2.0])
    g = np.array([[0, 0.3], [0.3, 0]], dtype=complex)
    (g2,) = energy_corrections(e, g, 2)
    assert np.allclose(g2, [0.09 / -2.0, 0.09 / 2.0])


def test_degenerate_coupled_levels_raise():
    e = np.array([0.0, 0.0, 1.0])
    g = np.zeros((3, 3), complex)
    g[0, 1] = g[1, 0] = 0.1
    with pytest.raises(DegenerateDenominatorError) as info:
        energy_corrections(e, g, 2)
    assert info.value.pair is not None


def test_degenerate_uncoupled_levels_are_fine():
    e = np.array([0.0, 0.0, 1.0])
    g = np.zeros((3, 3), complex)
    g[0, 2] = g[2, 0] = 0.1
    (g2,) = energy_corrections(e, g, 2)
    assert np.allclose(g2, [-0.01, 0.0, 0.01])
