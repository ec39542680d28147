# tests/test_overlaps.py
import numpy as np
import pytest

from rgbethe.dense import bethe_vector_dense, overlap_dense, real_vector
from rgbethe.ed import build_hamiltonian, diagonalize, sector_basis
from rgbethe.equations import bethe_residuals, energy_from_lambda
from rgbethe.errors import CapacityError, CoincidentArgumentsError, UnsupportedVariantError
from rgbethe.overlaps import (OverlapValue, bosonic_overlap, bosonic_state_vector, formfactor_sz, norm_gaudin,
                              overlap_detJ, overlap_detK, overlap_slavnov, pairing_matrix_element,
                              product_state_overlap, product_state_vector)
from rgbethe.rapidities import readgreen_extend, roots_from_lambda
from rgbethe.schema import DickeExtension, ExtPipExtension, ModelSpec, pip_model, readgreen_inverse_coupling
from rgbethe.solver import lowest_pattern, solve_all, solve_at
from rgbethe.states import OccupationPattern

OFF_SHELL = np.array([0.3 + 0.2j, 2.7 - 0.1j, 4.4 + 0.5j])


def _picket(L, g, N=None, kernel="rational"):
    return ModelSpec(kernel=kernel, levels=[float(i) for i in range(1, L + 1)], g=g, N=L // 2 if N is None else N)


def _ground(m):
    evb = solve_at(m, lowest_pattern(m))
    return evb, roots_from_lambda(m, evb)


def _close(a, b, scale, rel=1e-7):
    return abs(complex(a) - complex(b)) <= rel * max(scale, 1e-300)


def test_overlap_value_arithmetic():
    a = OverlapValue.from_complex(-2.0)
    b = OverlapValue.from_complex(0.5j)
    assert (a * b).value == pytest.approx(-1.0j)
    assert a.inverse().value == pytest.approx(-0.5)
    assert OverlapValue.from_complex(0.0).value == 0.0
    with pytest.raises(ZeroDivisionError):
        OverlapValue.from_complex(0.0).inverse()
    with pytest.raises(OverflowError):
        OverlapValue(800.0, 1.0 + 0j).value


@pytest.mark.parametrize("kernel,g", [("rational", -0.8), ("hyperbolic", -0.3)])
def test_determinant_routes_match_dense(kernel, g):
    m = _picket(6, g, kernel=kernel)
    evb, v = _ground(m)
    ref = overlap_dense(m, v, OFF_SHELL)
    scale = abs(ref)
    assert _close(overlap_detJ(m, evb, OFF_SHELL).value, ref, scale)
    assert _close(overlap_detK(m, v, OFF_SHELL).value, ref, scale)
    assert _close(overlap_slavnov(m, v, OFF_SHELL).value, ref, scale)
    if kernel == "rational":
        assert _close(overlap_slavnov(m, v, OFF_SHELL, form="standard").value, ref, scale)


@pytest.mark.parametrize("kernel,g", [("rational", -0.8), ("hyperbolic", -0.3)])
def test_norms(kernel, g):
    m = _picket(6, g, kernel=kernel)
    evb, v = _ground(m)
    ref = overlap_dense(m, v, v)
    assert _close(norm_gaudin(m, v).value, ref, abs(ref))
    assert _close(overlap_detJ(m, evb, evb).value, ref, abs(ref))
    assert _close(overlap_detK(m, v, v).value, ref, abs(ref))


def test_distinct_eigenstates_are_orthogonal():
    m = _picket(6, -0.8)
    states = list(solve_all(m).values())[:5]
    norms = [norm_gaudin(m, roots_from_lambda(m, s)).value for s in states]
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            val = overlap_detJ(m, states[i], states[j]).value
            assert abs(val) < 1e-8 * np.sqrt(abs(norms[i] * norms[j]))


def test_slavnov_rejects_shared_rapidity():
    m = _picket(6, -0.8)
    _, v = _ground(m)
    w = np.array(v.roots)
    w[1:] = OFF_SHELL[1:]
    with pytest.raises(CoincidentArgumentsError):
        overlap_slavnov(m, v, w)


def test_product_state_routes_and_vector():
    m = _picket(6, -0.8)
    evb, v = _ground(m)
    vec, basis = bethe_vector_dense(m, v)
    pat = OccupationPattern((1, 0, 1, 0, 1, 0))
    k = basis.index_of([pat.counts])[0]
    a = product_state_overlap(m, evb, pat, route="evb").value
    b = product_state_overlap(m, v, pat, route="izergin").value
    scale = np.max(np.abs(vec))
    assert _close(a, vec[k], scale) and _close(b, vec[k], scale)
    assert np.allclose(product_state_vector(m, evb, basis), vec, atol=1e-8 * scale)


@pytest.mark.parametrize("kernel,g", [("rational", -0.8), ("hyperbolic", -0.3)])
def test_three_routes_agree_on_random_off_shell_states(kernel, g):
    m = _picket(6, g, kernel=kernel)
    evb, v = _ground(m)
    a, _ = bethe_vector_dense(m, v)
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 25:
        w = rng.uniform(0.5, 6.5, m.N) + 1j * rng.uniform(0.2, 1.5, m.N) * rng.choice([-1.0, 1.0], m.N)
        near_v = np.abs(w[:, None] - np.asarray(v.roots)[None, :])
        near_w = np.abs(w[:, None] - w[None, :]) + np.eye(m.N)
        if min(near_v.min(), near_w.min()) < 0.1:
            continue
        b, _ = bethe_vector_dense(m, w)
        ref = a @ b
        scale = np.linalg.norm(a) * np.linalg.norm(b)
        assert _close(overlap_detJ(m, evb, w).value, ref, scale)
        assert _close(overlap_detK(m, v, w).value, ref, scale)
        assert _close(overlap_slavnov(m, v, w).value, ref, scale)
        checked += 1


def test_hyperbolic_product_state_routes():
    m = _picket(6, -0.3, kernel="hyperbolic")
    evb, v = _ground(m)
    vec, basis = bethe_vector_dense(m, v)
    scale = np.max(np.abs(vec))
    for k, row in enumerate(basis.counts):
        pat = OccupationPattern(tuple(int(x) for x in row[: m.L]))
        izergin = product_state_overlap(m, v, pat, route="izergin")
        assert izergin.route == "izergin_borchardt"
        assert _close(izergin.value, vec[k], scale)
        assert _close(product_state_overlap(m, evb, pat).value, vec[k], scale)


def test_bethe_vector_is_ed_eigenvector():
    m = _picket(6, -0.8)
    evb, v = _ground(m)
    vec = real_vector(product_state_vector(m, evb))
    assert vec is not None
    _, V = diagonalize(build_hamiltonian(m), n_lowest=1)
    assert abs(vec @ V[:, 0]) / np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-9)


def test_formfactor_matches_dense():
    m = _picket(6, -0.8)
    states = list(solve_all(m).values())
    sv, sw = states[0], states[3]
    v, w = roots_from_lambda(m, sv), roots_from_lambda(m, sw)
    a, basis = bethe_vector_dense(m, v)
    b, _ = bethe_vector_dense(m, w)
    scale = np.sqrt(abs((a @ a) * (b @ b)))
    for k in (0, 2, 5):
        sz = basis.spin_counts[:, k] - 0.5
        ref = a @ (sz * b)
        assert _close(formfactor_sz(m, sv, sw, k, backend="evb").value, ref, scale)
        assert _close(formfactor_sz(m, sv, sw, k, backend="rapidity").value, ref, scale)
        assert _close(formfactor_sz(m, sv, sw, k, backend="expansion").value, ref, scale)
        assert _close(formfactor_sz(m, sv, sw, k).value, ref, scale)
    diag = formfactor_sz(m, sv, sv, 1).value
    assert _close(diag, a @ ((basis.spin_counts[:, 1] - 0.5) * a), abs(a @ a))


def test_pairing_matrix_element_backends():
    m = _picket(6, -0.8)
    evb, _ = _ground(m)
    G = np.full((6, 6), -0.8)
    det = pairing_matrix_element(m, G, evb, evb, backend="determinant").value
    dense = pairing_matrix_element(m, G, evb, evb, backend="dense").value
    assert det == pytest.approx(energy_from_lambda(m, evb), abs=1e-8)
    assert dense == pytest.approx(det, abs=1e-8)
    other = list(solve_all(m).values())[2]
    G2 = G + np.diag(np.linspace(0.1, 0.6, 6))
    a = pairing_matrix_element(m, G2, evb, other, backend="determinant").value
    b = pairing_matrix_element(m, G2, evb, other, backend="dense").value
    assert a == pytest.approx(b, abs=1e-8)


def test_pairing_matrix_element_random_coupling_l8():
    m = _picket(8, -0.7)
    rng = np.random.default_rng(3)
    A = rng.uniform(-0.5, 0.5, (8, 8))
    G = 0.5 * (A + A.T)
    states = list(solve_all(m).values())
    pairs = [(states[0], states[0]), (states[0], states[5]), (states[7], states[12]), (states[20], states[3])]
    for sv, sw in pairs:
        for normalized in (True, False):
            a = pairing_matrix_element(m, G, sv, sw, normalized=normalized, backend="determinant")
            b = pairing_matrix_element(m, G, sv, sw, normalized=normalized, backend="dense")
            assert a.route == "determinant" and b.route == "dense"
            scale = max(abs(b.value), 1.0) if normalized else abs(b.value)
            assert _close(a.value, b.value, scale)


def test_pairing_matrix_element_unnormalized_off_shell_ket():
    m = _picket(6, -0.8)
    evb, _ = _ground(m)
    G = np.full((6, 6), -0.8) + np.diag(np.linspace(0.0, 0.5, 6))
    a = pairing_matrix_element(m, G, evb, OFF_SHELL, normalized=False, backend="determinant").value
    b = pairing_matrix_element(m, G, evb, OFF_SHELL, normalized=False, backend="dense").value
    assert _close(a, b, abs(b))


def test_pairing_matrix_element_beyond_dense_cap():
    m = _picket(22, -0.2)
    ground = lowest_pattern(m)
    counts = list(ground.counts)
    counts[10], counts[11] = counts[11], counts[10]
    sv = solve_at(m, ground)
    sw = solve_at(m, OccupationPattern(tuple(counts)))
    flat = np.full((22, 22), -0.2)
    diag = pairing_matrix_element(m, flat, sv, sv)
    assert diag.real == pytest.approx(energy_from_lambda(m, sv), rel=1e-6)
    assert abs(pairing_matrix_element(m, flat, sv, sw).value) < 1e-6
    rng = np.random.default_rng(5)
    A = rng.uniform(-0.3, 0.3, (22, 22))
    G = 0.5 * (A + A.T)
    vw = pairing_matrix_element(m, G, sv, sw).value
    wv = pairing_matrix_element(m, G, sw, sv).value
    assert np.isfinite(vw) and abs(vw - wv) <= 1e-6 * max(abs(vw), 1.0)


def _readgreen_pair(L, N, etas=None):
    """On-shell state of the (N+1)-pair p+ip model at its Read-Green point: N base roots plus one zero."""
    etas = [float(i) for i in range(1, L + 1)] if etas is None else etas
    G = 1.0 / readgreen_inverse_coupling(L, N)
    base = pip_model(etas, G, N)
    u = roots_from_lambda(base, solve_at(base, lowest_pattern(base)))
    ext = pip_model(etas, G, N + 1)
    return ext, np.asarray(readgreen_extend(u, 1).roots)


def test_zero_root_routes_match_dense():
    m, v = _readgreen_pair(8, 1)
    assert np.max(np.abs(bethe_residuals(m, v))) < 1e-8
    ref = overlap_dense(m, v, v)
    norm = norm_gaudin(m, v)
    assert norm.route == "gaudin" and _close(norm.value, ref, abs(ref))
    w_off = np.array([0.4 + 0.3j, 2.5 - 0.2j])
    w_shared = np.array([v[0], 1.3 + 0.4j])
    w_zero = np.array([0.0, 2.5 + 0.2j])
    for w in (w_off, w_shared, w_zero):
        ref = overlap_dense(m, v, w)
        scale = np.sqrt(abs(overlap_dense(m, v, v) * overlap_dense(m, w, w)))
        assert overlap_detJ(m, v, w).route == "J_L"
        assert _close(overlap_detJ(m, v, w).value, ref, scale)
        assert _close(overlap_detK(m, v, w).value, ref, scale)
    ref = overlap_dense(m, v, w_off)
    assert _close(overlap_slavnov(m, v, w_off).value, ref, abs(ref))


def test_zero_root_norm_beyond_dense_cap():
    m, v = _readgreen_pair(22, 7)
    assert m.N == 8
    norm = norm_gaudin(m, v)
    assert norm.route == "gaudin"
    assert np.isfinite(norm.log_magnitude)
    # the Bethe vector is real, so its bilinear norm is a positive sum of squares
    assert abs(norm.phase - 1.0) < 1e-6
    J = overlap_detJ(m, v, v)
    assert J.log_magnitude == pytest.approx(norm.log_magnitude, abs=1e-9)


def test_dicke_state_vector():
    m = ModelSpec(levels=[1.0, 2.0, 3.0], N=2, extension=DickeExtension(eps0=1.5, G=0.3))
    for evb in solve_all(m).values():
        v = roots_from_lambda(m, evb)
        ref, basis = bethe_vector_dense(m, v)
        ours = bosonic_state_vector(m, v, basis)
        assert np.allclose(ours, ref, atol=1e-8 * np.max(np.abs(ref)))


def test_ext_pip_state_vector():
    m = ModelSpec(kernel="hyperbolic", levels=[1.0, 2.0, 3.0], N=2, extension=ExtPipExtension(eta0=0.8, kappa=1.5))
    states = solve_all(m)
    assert len(states) == 7
    for evb in states.values():
        v = roots_from_lambda(m, evb)
        ref, basis = bethe_vector_dense(m, v)
        ours = bosonic_state_vector(m, v, basis)
        assert np.allclose(ours, ref, atol=1e-8 * np.max(np.abs(ref)))
    assert bosonic_overlap(m, v, 2, OccupationPattern((0, 0, 0))).route == "ext_pip_JM"


def test_unsupported_variants():
    m = ModelSpec(levels=[1.0, 2.0, 3.0], N=2, extension=DickeExtension(eps0=1.5, G=0.3))
    with pytest.raises(UnsupportedVariantError):
        overlap_detJ(m, np.zeros(2), np.zeros(2))
    spin_one = ModelSpec(levels=[1.0, 2.0], degeneracies=[1.0, 0.5], g=-0.3, N=1)
    with pytest.raises(UnsupportedVariantError):
        product_state_vector(spin_one, np.array([0.5 + 0.1j]), sector_basis(spin_one))


def test_bosonic_overlap_edges():
    m = ModelSpec(levels=[1.0, 2.0, 3.0], N=2, extension=DickeExtension(eps0=1.5, G=0.3))
    v = roots_from_lambda(m, next(iter(solve_all(m).values())))
    all_bosons = bosonic_overlap(m, v, 2, OccupationPattern((0, 0, 0)))
    assert all_bosons.value == pytest.approx(np.sqrt(2.0))
    with pytest.raises(CapacityError):
        bosonic_overlap(m, v, 3, OccupationPattern((0, 0, 0)))
    with pytest.raises(UnsupportedVariantError):
        bosonic_overlap(_picket(4, -0.5), v, 0, OccupationPattern((1, 1, 0, 0)))
