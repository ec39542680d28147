# tests/test_rgci.py
import numpy as np
import pytest
from pydantic import ValidationError

from rgbethe.apps.rgci import (PairingTable, _basis, bethe_basis_vectors, energy_functional, fock_energy,
                               ground_energy, load_pairing_table, offdiagonal_mass, optimal_coupling,
                               pairing_gaps, rg_basis_matrix, rgci_run)
from rgbethe.ed import build_hamiltonian, sector_basis
from rgbethe.equations import energy_from_lambda
from rgbethe.errors import ConfigError
from rgbethe.schema import ModelSpec
from rgbethe.solver import solve_all


def _pull(name="sn116"):
    return load_pairing_table(name)


def test_bundled_tables_load():
    sn = _pull()
    assert sn.capacities == [4, 3, 1, 6, 2]
    assert sn.pairs == 8
    assert _basis(sn, sn.pairs).dim == 110
    fe = _pull("fe56")
    assert fe.omega_kind == "pairs" and fe.capacities == fe.omega
    with pytest.raises(ConfigError):
        load_pairing_table("no-such-table")


def test_table_validation():
    with pytest.raises(ValidationError):
        PairingTable(name="bad", omega=[3, 2], levels=[0.0, 1.0])
    with pytest.raises(ValidationError):
        PairingTable(name="bad", omega=[2, 2], levels=[0.0, 1.0], G=[[-0.1, -0.2], [-0.3, -0.1]])
    with pytest.raises(ConfigError):
        PairingTable(name="bare", omega=[2, 2], levels=[0.0, 1.0]).G_matrix


def test_ci_converges_to_exact_energy():
    run = rgci_run(_pull(), g=-0.2)
    assert run.dim == 110
    assert np.all(np.diff(run.delta_c) <= 1e-10)
    assert run.delta_c[-1] == pytest.approx(0.0, abs=1e-9)
    assert run.energies[-1] == pytest.approx(run.exact_energy, abs=1e-8)
    assert run.variational_energy >= run.exact_energy - 1e-9
    assert len(run.rows()) == run.dim
    assert run.summary()["n_for_1pct"] <= run.dim


def test_uncoupled_surrogate_starts_from_fock():
    run = rgci_run(_pull(), g=0.0)
    assert run.fock_energy == pytest.approx(fock_energy(_pull()))
    assert run.delta_c[0] == pytest.approx(1.0, abs=1e-9)


def test_optimal_coupling_beats_fock():
    table = _pull()
    g0, e0 = optimal_coupling(table)
    assert -1.0 <= g0 <= 0.0
    assert e0 <= fock_energy(table) + 1e-6


def test_odd_particle_blocking():
    table = _pull()
    assert ground_energy(table, 0) == pytest.approx(0.0)
    assert ground_energy(table, 1) == pytest.approx(-6.121)
    with pytest.raises(ConfigError):
        ground_energy(table, 100)


def test_three_point_gaps():
    linear = {A: 2.0 * A for A in range(10, 14)}
    assert all(v == pytest.approx(0.0) for v in pairing_gaps(linear).values())
    assert pairing_gaps({10: 0.0, 11: 1.0, 12: 0.0}) == {12: -2.0}
    with pytest.raises(ConfigError):
        pairing_gaps({10: 0.0, 12: 0.0}, masses=[12])


def test_energy_functional_and_mass():
    table = _pull()
    assert energy_functional(table, 0.0) == pytest.approx(fock_energy(table), abs=1e-9)
    run = rgci_run(table, g=-0.2, max_basis=12)
    assert run.dim == 12
    assert offdiagonal_mass(run.matrix) > 0.0
    assert offdiagonal_mass(np.diag([1.0, 2.0])) == 0.0


def test_bethe_states_diagonalize_their_own_hamiltonian():
    m = ModelSpec(levels=[1.0, 2.0, 3.0, 4.0, 5.0], g=-0.6, N=2)
    basis = sector_basis(m)
    states = list(solve_all(m).values())
    V = bethe_basis_vectors(m, states, basis)
    M = rg_basis_matrix(build_hamiltonian(m, basis), V)
    energies = [energy_from_lambda(m, s) for s in states]
    assert np.allclose(np.diag(M), energies, atol=1e-8)
    assert offdiagonal_mass(M) < 1e-8


def _toy(omega, levels, pairs):
    L = len(levels)
    G = [[-0.25 - 0.03 * (i + j) + (0.05 if i == j else 0.0) for j in range(L)] for i in range(L)]
    return PairingTable(name="toy", omega=omega, omega_kind="pairs", levels=levels, G=G, pairs=pairs)


@pytest.mark.parametrize("table", [
    _toy([1] * 6, [0.0, 1.0, 2.3, 3.1, 4.6, 5.2], 3),
    _toy([2, 2, 2, 2], [0.0, 1.2, 2.1, 3.5], 3),
], ids=["spin-half", "spin-one"])
def test_bethe_basis_matches_integrable_basis(table):
    bethe = rgci_run(table, g=-0.3, basis="bethe")
    integrable = rgci_run(table, g=-0.3, basis="integrable")
    assert bethe.basis == "bethe" and integrable.basis == "integrable"
    assert np.allclose(bethe.integrable_energies, integrable.integrable_energies, atol=1e-8)
    assert np.allclose(bethe.delta_c, integrable.delta_c, atol=1e-7)
    assert bethe.energies[-1] == pytest.approx(bethe.exact_energy, abs=1e-7)
    assert rgci_run(table, g=-0.3).basis == "bethe"


def test_bethe_basis_needs_small_spins():
    table = _pull()
    assert rgci_run(table, g=-0.2, max_basis=3).basis == "integrable"
    with pytest.raises(ConfigError):
        rgci_run(table, g=-0.2, basis="bethe")
    with pytest.raises(ConfigError):
        rgci_run(_toy([1] * 4, [0.0, 1.0, 2.0, 3.0], 2), g=0.0, basis="bethe")
