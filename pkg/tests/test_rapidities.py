# tests/test_rapidities.py
import numpy as np
import pytest

from rgbethe.dense import bethe_vector_dense
from rgbethe.ed import build_hamiltonian, diagonalize
from rgbethe.equations import bethe_residuals, energy_from_lambda, evb_residuals, lambda_from_roots, state_energy
from rgbethe.errors import ConfigError, SingularPointError, UnsupportedVariantError
from rgbethe.overlaps import dual_ratio
from rgbethe.rapidities import (close_conjugates, direct_solve, dual_lambda, dual_roots, laguerre_coefficients,
                                polish_roots, readgreen_extend, roots_from_lambda, weak_coupling_roots)
from rgbethe.schema import ModelSpec, bath_model, pip_model, readgreen_inverse_coupling
from rgbethe.solver import lowest_pattern, solve_all, solve_at
from rgbethe.states import BetheRoots, OccupationPattern


def _picket(L, g, N=None):
    return ModelSpec(levels=[float(i) for i in range(1, L + 1)], g=g, N=L // 2 if N is None else N)


def _sorted(v):
    return np.sort_complex(np.asarray(v.roots if isinstance(v, BetheRoots) else v))


def _check_roots(m, evb):
    roots = roots_from_lambda(m, evb)
    assert roots.N == m.N
    assert np.max(np.abs(bethe_residuals(m, roots))) < 1e-8
    back = lambda_from_roots(m, roots)
    assert np.allclose(back.lambdas, evb.lambdas, rtol=1e-7, atol=1e-7)
    assert state_energy(m, roots) == pytest.approx(energy_from_lambda(m, evb), abs=1e-8)


def test_roots_of_every_weak_coupling_state():
    m = _picket(6, -0.1)
    for evb in solve_all(m).values():
        _check_roots(m, evb)


@pytest.mark.parametrize("g", [-0.8, -1.5])
def test_ground_state_roots_at_strong_coupling(g):
    m = _picket(10, g)
    _check_roots(m, solve_at(m, lowest_pattern(m)))


def test_monomial_and_ode_routes_agree():
    m = _picket(8, -0.7)
    evb = solve_at(m, lowest_pattern(m))
    a = roots_from_lambda(m, evb, route="monomial")
    b = roots_from_lambda(m, evb, route="ode")
    assert np.allclose(_sorted(a), _sorted(b), atol=1e-7)


def test_ground_state_roots_are_conjugate_closed():
    m = _picket(8, -1.2)
    v = roots_from_lambda(m, solve_at(m, lowest_pattern(m))).roots
    assert np.allclose(np.sort_complex(v), np.sort_complex(np.conj(v)), atol=1e-12)


def test_direct_solve_agrees_at_weak_coupling():
    m = _picket(6, -0.05)
    pat = lowest_pattern(m)
    direct = direct_solve(m, pat)
    via_evb = roots_from_lambda(m, solve_at(m, pat))
    assert np.allclose(_sorted(direct), _sorted(via_evb), atol=1e-8)


def test_weak_coupling_roots_sit_next_to_levels():
    m = _picket(4, -0.01, N=2)
    v = weak_coupling_roots(m, OccupationPattern((1, 0, 1, 0)), -0.01)
    assert np.allclose(np.sort(v.real), [1.0, 3.0], atol=0.05)
    # spin-1/2: L_1^(-2)(u) = -1 - u, one root u = -1
    assert np.allclose(laguerre_coefficients(1, -2.0), [-1.0, -1.0])


def test_close_conjugates_symmetrizes():
    v = close_conjugates(np.array([1.0 + 1e-12j, 2.0 + 0.5j, 2.0 - 0.5000001j]))
    assert v[0].imag == 0.0
    assert v[1] == np.conj(v[2])


def test_readgreen_extend_appends_zeros():
    r = readgreen_extend(BetheRoots(np.array([1.0 + 0.5j, 1.0 - 0.5j])), 2)
    assert r.N == 4 and r.n_zero == 2
    with pytest.raises(ConfigError):
        readgreen_extend(r, -1)


def test_dual_state_is_same_vector():
    m = _picket(6, -0.5, N=2)
    evb = solve_at(m, lowest_pattern(m))
    dm, dual = dual_lambda(m, evb)
    assert dm.N == 4 and dm.g == pytest.approx(0.5)
    assert np.max(np.abs(evb_residuals(dm, dual))) < 1e-8
    roots = roots_from_lambda(m, evb)
    droots = dual_roots(m, evb)
    assert droots.N == 4
    a, _ = bethe_vector_dense(m, roots)
    b, _ = bethe_vector_dense(m, droots, dual=True)
    r = dual_ratio(m, roots).value
    assert np.allclose(a, r * b, rtol=1e-7, atol=1e-9 * np.max(np.abs(a)))


def test_bath_has_no_rapidities():
    m = bath_model([1.0, 2.0, 3.0], G=0.3, gamma=0.1)
    evb = next(iter(solve_all(m).values()))
    with pytest.raises(UnsupportedVariantError):
        roots_from_lambda(m, evb)


def test_polish_recovers_perturbed_roots():
    m = _picket(8, -0.7)
    good = roots_from_lambda(m, solve_at(m, lowest_pattern(m)))
    kicked = BetheRoots(np.asarray(good.roots) + 1e-5 * (1.0 + 0.5j))
    fixed = polish_roots(m, kicked)
    assert np.max(np.abs(bethe_residuals(m, fixed))) < 1e-9
    assert np.allclose(_sorted(fixed), _sorted(good), atol=1e-8)


def test_direct_solve_stops_at_singular_point():
    m = _picket(4, -2.0)
    pat = lowest_pattern(m)
    # the continued state carries a complex pair at this coupling
    assert np.max(np.abs(roots_from_lambda(m, solve_at(m, pat)).roots.imag)) > 1e-3
    with pytest.raises(SingularPointError) as info:
        direct_solve(m, pat)
    assert -2.0 < info.value.g_blocking < 0.0


def test_readgreen_extension_keeps_the_energy():
    L, N = 8, 2
    etas = [float(i) for i in range(1, L + 1)]
    G = 1.0 / readgreen_inverse_coupling(L, N)
    base = pip_model(etas, G, N)
    evb = solve_at(base, lowest_pattern(base))
    u = roots_from_lambda(base, evb)
    ext = pip_model(etas, G, N + 1)
    v = readgreen_extend(u, 1)
    assert np.max(np.abs(bethe_residuals(ext, v.roots))) < 1e-8
    E_base = energy_from_lambda(base, evb)
    E_ext = energy_from_lambda(ext, lambda_from_roots(ext, v))
    assert E_ext == pytest.approx(E_base, abs=1e-8)
    for m, E in ((base, E_base), (ext, E_ext)):
        ed, _ = diagonalize(build_hamiltonian(m))
        assert np.min(np.abs(ed - E)) < 1e-8 * max(1.0, np.max(np.abs(ed)))
