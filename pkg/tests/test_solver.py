# tests/test_solver.py
import numpy as np
import pytest

from rgbethe.ed import (DenseOperator, build_charge, build_hamiltonian, diagonalize, expectation, match_spectra,
                        sector_basis, sz_operator)
from rgbethe.equations import charge_eigenvalues, energy_from_lambda, evb_residuals
from rgbethe.errors import CapacityError
from rgbethe.schema import (CentralSpinExtension, DickeExtension, ExtPipExtension, ModelSpec, bath_model, pip_model,
                            symmetric_pip_coupling)
from rgbethe.solver import (SweepOptions, dlambda_dg, enumerate_patterns, init_weak_coupling, lowest_pattern,
                            newton_refine, occupations, patterns_for, solve_all, solve_at, sweep_g, track_levels)
from rgbethe.states import EvbVariables, OccupationPattern


def _picket(L, g, N=None):
    return ModelSpec(levels=[float(i) for i in range(1, L + 1)], g=g, N=L // 2 if N is None else N)


def _energies_match(model, tol=1e-8):
    states = solve_all(model)
    assert len(states) == len(patterns_for(model))
    ours = [energy_from_lambda(model, evb) for evb in states.values()]
    exact, _ = diagonalize(build_hamiltonian(model))
    ok, dev = match_spectra(ours, exact, tol * max(1.0, float(np.max(np.abs(exact)))))
    return ok, dev


@pytest.mark.parametrize("L", [4, 6])
@pytest.mark.parametrize("g", [-0.2, -0.8, -1.5])
def test_picket_fence_spectrum_matches_ed(L, g):
    ok, dev = _energies_match(_picket(L, g))
    assert ok, dev


def test_charges_match_joint_eigenbasis():
    m = _picket(4, -0.8)
    Q = [build_charge(m, i).matrix for i in range(m.L)]
    r = np.random.default_rng(0).uniform(0.5, 1.5, m.L)
    _, V = diagonalize(DenseOperator(sum(ri * qi for ri, qi in zip(r, Q)), sector_basis(m), "combo"))
    exact = np.array([[V[:, k] @ q @ V[:, k] for q in Q] for k in range(V.shape[1])])
    for evb in solve_all(m).values():
        q = charge_eigenvalues(m, evb)
        assert np.min(np.max(np.abs(exact - q[None, :]), axis=1)) < 1e-8


@pytest.mark.parametrize("model", [
    ModelSpec(kernel="hyperbolic", levels=[1.0, 2.0, 3.0, 4.5], g=-0.3, N=2),
    ModelSpec(levels=[1.0, 2.0, 3.5], degeneracies=[1.0, 0.5, 1.0], g=-0.4, N=2),
    ModelSpec(levels=[3.0, 2.0, 1.0, 0.0], g=-0.5, N=2, extension=CentralSpinExtension(index=0, B_z=1.0)),
    ModelSpec(levels=[1.0, 2.0], N=2, extension=DickeExtension(eps0=1.5, G=0.3)),
    ModelSpec(kernel="hyperbolic", levels=[1.0, 3.0], N=2, extension=ExtPipExtension(eta0=0.5, kappa=2.0)),
    bath_model([1.0, 2.0, 3.0], G=0.3, gamma=0.1),
], ids=["pip", "spin-one", "central-spin", "dicke", "ext-pip", "bath"])
def test_variant_spectra_match_ed(model):
    ok, dev = _energies_match(model)
    assert ok, dev


def test_pattern_counts():
    assert len(enumerate_patterns(6, 3)) == 20
    assert len(enumerate_patterns(3, 2, [1.0, 0.5, 1.0])) == 5
    with pytest.raises(CapacityError):
        enumerate_patterns(3, 4)
    m = ModelSpec(levels=[2.0, 0.0, 1.0], g=-0.1, N=2)
    assert lowest_pattern(m).counts == (0, 1, 1)


def test_sweep_residuals_and_trace():
    m = _picket(8, -1.0)
    tr = sweep_g(m, lowest_pattern(m), SweepOptions(g_target=-1.0))
    assert tr.grid[-1] == pytest.approx(-1.0)
    assert len(tr.grid) == len(tr.states) == len(tr.iterations)
    assert np.max(np.abs(evb_residuals(m, tr.final))) < 1e-9
    assert np.all(np.diff(tr.grid) < 0)


def test_opposite_sign_start_rejected():
    with pytest.raises(ValueError):
        SweepOptions(g_start=0.1, g_target=-1.0)


def test_hellmann_feynman_derivative():
    m = _picket(6, -0.6)
    pat = lowest_pattern(m)
    h = 1e-5
    lo = solve_at(m, pat, -0.6 - h)
    hi = solve_at(m, pat, -0.6 + h)
    mid = solve_at(m, pat, -0.6)
    fd = (np.asarray(hi.lambdas) - np.asarray(lo.lambdas)) / (2 * h)
    d1, d2 = dlambda_dg(m, mid, order=2)
    assert np.allclose(d1, fd, rtol=1e-5, atol=1e-6)
    assert np.all(np.isfinite(d2))
    occ = occupations(m, mid, d1)
    assert occ.sum() == pytest.approx(m.N - 0.5 * m.L, abs=1e-8)


def test_occupations_match_ed():
    m = _picket(4, -0.8)
    evb = solve_at(m, lowest_pattern(m))
    occ = occupations(m, evb)
    H = build_hamiltonian(m)
    _, V = diagonalize(H)
    exact = [expectation(sz_operator(H.basis, i), V[:, 0]) for i in range(m.L)]
    assert np.allclose(occ, exact, atol=1e-7)


def test_track_levels_lands_on_ground_state():
    m = _picket(6, -0.8)
    start = solve_at(m, lowest_pattern(m))
    target = [1.0, 2.1, 2.9, 4.2, 5.0, 6.3]
    m2, evb2 = track_levels(m, start, target)
    assert list(m2.levels) == target
    w, _ = diagonalize(build_hamiltonian(m2), n_lowest=1)
    assert energy_from_lambda(m2, evb2) == pytest.approx(w[0], abs=1e-8)
    assert np.max(np.abs(evb_residuals(m2, evb2))) < 1e-9


def test_weak_coupling_start():
    m = _picket(4, -0.8)
    pat = OccupationPattern((1, 0, 1, 0))
    evb = init_weak_coupling(m, pat, -1e-4)
    assert evb.g == pytest.approx(-1e-4)
    assert np.allclose(evb.g * np.asarray(evb.lambdas), [-2.0, 0.0, -2.0, 0.0], atol=1e-3)


def test_pip_couplings():
    m = pip_model([1.0, 2.0, 3.0, 4.0], G=0.5, N=1)
    assert m.kernel == "hyperbolic"
    assert 1.0 / m.g == pytest.approx(4 / 2 - 1 - 1 / 0.5)
    assert symmetric_pip_coupling(m) == pytest.approx(-1.0 / 3.0)


def test_empty_sector():
    m = _picket(4, -0.5, N=0)
    states = solve_all(m)
    assert list(states) == [OccupationPattern((0, 0, 0, 0))]


def test_newton_refine_from_nearby_guess():
    m = _picket(6, -0.8)
    exact = solve_at(m, lowest_pattern(m))
    guess = EvbVariables(np.asarray(exact.lambdas) + 1e-4, exact.g)
    back = newton_refine(m, guess)
    assert np.allclose(back.lambdas, exact.lambdas, atol=1e-9)


def test_ext_pip_single_level_by_hand():
    # one level, one quantum: a 2x2 block in {|1 boson, ↓⟩, |0 bosons, ↑⟩}
    m = ModelSpec(kernel="hyperbolic", levels=[1.0], N=1, extension=ExtPipExtension(eta0=1.0, kappa=1.0))
    energies = sorted(energy_from_lambda(m, evb) for evb in solve_all(m).values())
    exact = -0.25 + np.array([-1.0, 1.0]) * np.sqrt(1.0 / 16.0 + 1.0)
    assert np.allclose(energies, exact, atol=1e-9)


def test_ext_pip_charges_match_ed():
    m = ModelSpec(kernel="hyperbolic", levels=[1.0, 3.0], N=2, extension=ExtPipExtension(eta0=0.5, kappa=2.0))
    q = np.array([charge_eigenvalues(m, evb) for evb in solve_all(m).values()])
    for i in range(m.L):
        ed, _ = diagonalize(build_charge(m, i))
        ok, dev = match_spectra(q[:, i], ed, 1e-8)
        assert ok, (i, dev)


def test_picket_spectrum_is_a_bijection():
    m = _picket(8, -0.4)
    states = solve_all(m)
    ours = np.sort([energy_from_lambda(m, evb) for evb in states.values()])
    exact, _ = diagonalize(build_hamiltonian(m))
    assert len(ours) == len(exact) == 70
    # sorted one-to-one match: no Bethe state lands twice on one eigenvalue
    assert np.allclose(ours, np.sort(exact), atol=1e-8 * np.max(np.abs(exact)))


def test_sweep_is_reversible():
    m = _picket(6, -0.05)
    pat = OccupationPattern((1, 0, 1, 0, 1, 0))
    out = sweep_g(m, pat, SweepOptions(g_target=-1.2))
    back = sweep_g(m, pat, SweepOptions(g_target=-0.05), start=out.final)
    assert back.grid[-1] == pytest.approx(-0.05)
    assert np.all(np.diff(back.grid) > 0)
    direct = solve_at(m, pat, -0.05)
    assert np.allclose(back.final.lambdas, direct.lambdas, rtol=1e-9, atol=1e-8)
