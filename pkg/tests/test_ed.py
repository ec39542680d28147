# tests/test_ed.py
import numpy as np
import pytest

from rgbethe.ed import (DenseOperator, build_charge, build_hamiltonian, commutator_norm, diagonalize, expectation,
                        match_spectra, number_operator, pair_operator, sector_basis, spin_dot_operator, sz_operator)
from rgbethe.equations import hamiltonian_coefficients
from rgbethe.errors import CapacityError, DimensionCapError, NonHermitianError, UnsupportedVariantError
from rgbethe.schema import ModelSpec, bath_model


def _bcs(L=4, N=2, g=-0.7):
    return ModelSpec(levels=[float(i) for i in range(1, L + 1)], g=g, N=N)


def test_sector_dimensions():
    assert sector_basis(_bcs(4, 2)).dim == 6
    assert sector_basis(bath_model([1.0, 2.0, 3.0], G=0.3, gamma=0.1)).dim == 8
    assert sector_basis(_bcs(2, 2), capacities=[2, 2]).dim == 3
    with pytest.raises(DimensionCapError):
        sector_basis(_bcs(12, 6), cap=100)
    with pytest.raises(CapacityError):
        sector_basis(_bcs(4, 2), capacities=[1, 1])


def test_basis_lookup():
    b = sector_basis(_bcs(4, 2))
    idx = b.index_of(b.counts)
    assert list(idx) == list(range(b.dim))
    assert b.index_of([[1, 1, 1, 0]])[0] == -1


def test_free_spectrum_is_level_sums():
    w, _ = diagonalize(build_hamiltonian(_bcs(4, 2, g=0.0)))
    assert np.allclose(w, [6.0, 8.0, 10.0, 10.0, 12.0, 14.0])


def test_charges_commute_with_each_other_and_h():
    m = _bcs(5, 2, g=-0.7)
    H = build_hamiltonian(m)
    Q = [build_charge(m, i) for i in range(m.L)]
    for i in range(m.L):
        assert commutator_norm(H, Q[i]) < 1e-10
        for j in range(i + 1, m.L):
            assert commutator_norm(Q[i], Q[j]) < 1e-10


def test_unshifted_charges_sum_to_total_sz():
    m = _bcs(5, 2, g=-0.7)
    total = sum(build_charge(m, i, shifted=False).matrix for i in range(m.L))
    assert np.allclose(total, (m.N - 0.5 * m.L) * np.eye(total.shape[0]), atol=1e-12)


@pytest.mark.parametrize("m", [
    _bcs(5, 2, g=-0.7),
    _bcs(4, 3, g=0.4),
    ModelSpec(kernel="hyperbolic", levels=[1.0, 2.0, 3.0, 4.5], g=-0.3, N=2),
], ids=["bcs", "bcs-repulsive", "pip"])
def test_hamiltonian_is_charge_combination(m):
    c, const = hamiltonian_coefficients(m)
    H = build_hamiltonian(m).matrix
    S = sum(ci * build_charge(m, i, shifted=False).matrix for i, ci in enumerate(c))
    assert np.allclose(H, S + const * np.eye(H.shape[0]), atol=1e-10)


def test_match_spectra():
    ok, dev = match_spectra([1.0, 2.0, 2.0], [2.0 + 1e-12, 1.0, 2.0], 1e-9)
    assert ok and dev < 1e-11
    ok, _ = match_spectra([1.0, 2.0], [1.0, 3.0], 1e-9)
    assert not ok
    ok, _ = match_spectra([1.0], [1.0, 2.0], 1e-9)
    assert not ok


def test_simple_operators():
    b = sector_basis(_bcs(4, 2))
    assert np.allclose(number_operator(b).matrix, 2.0 * np.eye(b.dim))
    assert np.allclose(spin_dot_operator(b, 1, 1).matrix, 0.75 * np.eye(b.dim))
    assert np.allclose(sum(sz_operator(b, i).matrix for i in range(4)), np.zeros((b.dim, b.dim)))
    with pytest.raises(UnsupportedVariantError):
        pair_operator(b, 0)


def test_expectation_and_hermiticity():
    b = sector_basis(_bcs(4, 2))
    H = build_hamiltonian(_bcs(4, 2))
    w, V = diagonalize(H)
    assert expectation(H, V[:, 0]) == pytest.approx(w[0])
    bad = DenseOperator(np.triu(np.ones((b.dim, b.dim))), b, "upper")
    with pytest.raises(NonHermitianError):
        diagonalize(bad)


def test_bath_breaks_number_conservation_only_with_gamma():
    closed = bath_model([1.0, 2.0, 3.0], G=0.3, gamma=0.0)
    opened = bath_model([1.0, 2.0, 3.0], G=0.3, gamma=0.2)
    Nop = number_operator(sector_basis(closed))
    assert commutator_norm(build_hamiltonian(closed), Nop) < 1e-12
    assert commutator_norm(build_hamiltonian(opened), Nop) > 1e-3
    b = sector_basis(opened)
    S = pair_operator(b, 0).matrix
    assert np.allclose(S.T @ S + S @ S.T, np.eye(b.dim))
