# rgbethe/equations.py
from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from rgbethe.config import TAU_COINCIDE, TAU_CONJ
from rgbethe.errors import CoincidentArgumentsError, ImaginaryPartError, UnsupportedVariantError
from rgbethe.evb import system_for
from rgbethe.kernels import z_matrix
from rgbethe.schema import ModelSpec, coupling_parameter, pip_coupling
from rgbethe.states import BetheRoots, EvbVariables

# ----------------------------
# Helpers
# ----------------------------
def _roots(roots) -> np.ndarray:
    if isinstance(roots, BetheRoots):
        return np.asarray(roots.roots, dtype=complex)
    return np.asarray(roots, dtype=complex).reshape(-1)


def _check_roots(model: ModelSpec, v: np.ndarray, zero_cluster: bool = False) -> None:
    tol = TAU_COINCIDE * max(model.level_spread, 1.0)
    e = model.eps
    if len(v) == 0:
        return
    hit = np.argwhere(np.abs(v[:, None] - e[None, :]) < tol)
    if len(hit):
        a, i = hit[0]
        raise CoincidentArgumentsError(f"root {a} ({v[a]:.6g}) sits on level {i}", (int(a), int(i)))
    D = np.abs(v[:, None] - v[None, :]) + np.eye(len(v)) * (1.0 + tol)
    if zero_cluster:
        z = v == 0
        D[np.ix_(z, z)] = 1.0 + tol
    hit = np.argwhere(D < tol)
    if len(hit):
        a, b = hit[0]
        raise CoincidentArgumentsError(f"roots {a} and {b} coincide ({v[a]:.6g})", (int(a), int(b)))


def _gaudin_pair_sum(kernel, v: np.ndarray, zero_cluster: bool) -> np.ndarray:
    """Σ_{b≠a} Z(v_b, v_a); pairs of exact zeros drop out."""
    n = len(v)
    out = np.zeros(n, dtype=complex)
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            if zero_cluster and v[a] == 0 and v[b] == 0:
                continue
            if zero_cluster and v[a] == 0:
                out[a] += 1.0          # Z(v_b, 0) = 1
            elif zero_cluster and v[b] == 0:
                out[a] += -1.0         # Z(0, v_a) = -1
            else:
                out[a] += kernel.z(v[b], v[a])
    return out


# ----------------------------
# Bethe equations
# ----------------------------
def bethe_residuals(model: ModelSpec, roots) -> np.ndarray:
    """
    Residual per rapidity:
      - Gaudin (BCS, p+ip, central spin): 1/g + Σ_i s_i Z(ε_i, v_a) - Σ_{b≠a} Z(v_b, v_a)
      - dicke:   (ε₀ - v_a) - 2G² Σ_i s_i/(ε_i - v_a) + 2G² Σ_{b≠a} 1/(v_b - v_a)
      - ext_pip: κ - η₀²/v_a + Σ_i s_i(ε_i + v_a)/(ε_i - v_a) - Σ_{b≠a} (v_b + v_a)/(v_b - v_a)
      - bath:    residual in w_a = v_a² carrying the γ²/G product term
    """
    v = _roots(roots)
    kind = model.extension.kind
    e = model.eps
    s = model.spins
    k = model.gaudin_kernel
    if kind == "bath":
        return _bath_residuals(model, v)
    zero_cluster = model.kernel == "hyperbolic" and kind in ("none", "central_spin")
    _check_roots(model, v, zero_cluster=zero_cluster)
    if len(v) == 0:
        return np.zeros(0, dtype=complex)

    if kind == "dicke":
        G = model.extension.G
        lev = (s[None, :] / (e[None, :] - v[:, None])).sum(axis=1)
        pair = _gaudin_pair_sum(model.gaudin_kernel, v, False)     # rational Z = 1/(v_b - v_a)
        return (model.extension.eps0 - v) - 2.0 * G * G * lev + 2.0 * G * G * pair

    if kind == "ext_pip":
        ext = model.extension
        lev = (s[None, :] * k.z(e[None, :], v[:, None])).sum(axis=1)
        pair = _gaudin_pair_sum(k, v, False)
        return ext.kappa - ext.eta0 ** 2 / v + lev - pair

    if model.kernel == "trigonometric" or kind in ("none", "central_spin"):
        zl = np.zeros((len(v), len(e)), dtype=complex)
        for a, va in enumerate(v):
            if zero_cluster and va == 0:
                zl[a] = 1.0            # Z(η_i, 0) = 1
            else:
                zl[a] = k.z(e, va)
        lev = (zl * s[None, :]).sum(axis=1)
        return 1.0 / model.g + lev - _gaudin_pair_sum(k, v, zero_cluster)

    raise UnsupportedVariantError(f"no Bethe equations for extension {kind}")


def _bath_residuals(model: ModelSpec, w: np.ndarray) -> np.ndarray:
    ext = model.extension
    G, gam = ext.G, ext.gamma
    eta = model.eps
    _check_roots(model, w)
    n = len(w)
    out = np.zeros(n, dtype=complex)
    for a in range(n):
        others = np.delete(w, a)
        r = (1.0 + G) - G * np.sum(eta / (eta - w[a])) + 2.0 * G * np.sum(others / (others - w[a]))
        if gam != 0.0:
            num = np.prod(1.0 / w[a] - 1.0 / eta)
            den = np.prod(1.0 / w[a] - 1.0 / others) if len(others) else 1.0
            r += (gam * gam / G) * num / den
        out[a] = r
    return out


# ----------------------------
# Eigenvalue-based variables
# ----------------------------
def lambda_from_roots(model: ModelSpec, roots, tol: float = TAU_CONJ) -> EvbVariables:
    v = _roots(roots)
    kind = model.extension.kind
    if kind == "bath":
        raise UnsupportedVariantError("bath eigenvalue-based variables are charge eigenvalues; use the EVB solver")
    e = model.eps
    k = model.gaudin_kernel
    L = model.L
    if len(v) == 0:
        lam = np.zeros(L, dtype=complex)
        lam2 = np.zeros(L, dtype=complex)
    else:
        if kind == "dicke":
            zm = 1.0 / (e[:, None] - v[None, :])
        else:
            zm = np.empty((L, len(v)), dtype=complex)
            for a, va in enumerate(v):
                zm[:, a] = 1.0 if (va == 0 and model.kernel == "hyperbolic") else k.z(e, va)
        lam = zm.sum(axis=1)
        lam2 = (zm ** 2).sum(axis=1)
    bad = np.where(np.abs(lam.imag) > tol * (1.0 + np.abs(lam.real)))[0]
    if len(bad):
        i = int(bad[0])
        raise ImaginaryPartError(f"Λ_{i} has imaginary part {lam[i].imag:.3e}; roots are not conjugation-closed")
    p = coupling_parameter(model)
    lambda0 = None
    if kind == "dicke":
        lambda0 = float(np.sum(v).real)
    elif kind == "ext_pip":
        lambda0 = float((model.extension.eta0 ** 2 * np.sum(1.0 / v)).real) if len(v) else 0.0
    lambda2 = None
    if not model.spin_half and kind == "none":
        lambda2 = np.where(np.abs(model.spins - 1.0) < 1e-12, lam2.real, 0.0)
    return EvbVariables(lambdas=lam.real, g=p, lambda0=lambda0, lambda2=lambda2)


def evb_residuals(model: ModelSpec, evb: EvbVariables) -> np.ndarray:
    """Quadratic equations followed by the variant's constraint equation."""
    sys = system_for(model)
    x = sys.from_evb(evb)
    p = evb.g
    return np.concatenate([sys.residual(x, p), sys.extra_residuals(x, p)])


# ----------------------------
# Charges and energies
# ----------------------------
def charge_eigenvalues(model: ModelSpec, evb: EvbVariables, shifted: Optional[bool] = None) -> np.ndarray:
    """
    Gaudin charges Q_i = S^z_i + g Σ_j [X_ij (S^x S^x + S^y S^y) + Z_ij S^z S^z]:
      q_i = -s_i [1 + gΛ_i - g Σ_j Z_ij s_j]
    shifted spin-1/2 form (Q_i|0⟩ = 0): -(g/2) Λ_i.
    Dicke returns ε₀-scaled charges, ext-p+ip and bath their own conventions.
    """
    lam = np.asarray(evb.lambdas, dtype=float)
    kind = model.extension.kind
    e = model.eps
    if kind == "bath":
        return lam.copy()
    if kind == "dicke":
        G = evb.g
        R = z_matrix(model.gaudin_kernel, e)
        return 0.5 * ((e - model.extension.eps0) + 2.0 * G * G * lam - G * G * R.sum(axis=1))
    Z = z_matrix(model.gaudin_kernel, e)
    if kind == "ext_pip":
        ext = model.extension
        kappa = 1.0 / evb.g
        return 0.5 * (-kappa - lam + ext.eta0 ** 2 / e) + 0.25 * Z.sum(axis=1)
    g = evb.g
    if shifted is None:
        shifted = model.spin_half
    if shifted:
        if not model.spin_half:
            raise UnsupportedVariantError("shifted charges are defined for spin-1/2 models")
        return -0.5 * g * lam
    s = model.spins
    return -s * (1.0 + g * lam - g * (Z * s[None, :]).sum(axis=1))


def hamiltonian_coefficients(model: ModelSpec) -> Tuple[np.ndarray, float]:
    """(c, C) with H = Σ c_i Q_i + C for the unshifted Gaudin charges in the N-pair sector."""
    kind = model.extension.kind
    e = model.eps
    L, N, g = model.L, model.N, model.g
    if kind == "central_spin":
        c = np.zeros(L)
        c[model.extension.index] = model.extension.B_z
        return c, 0.0
    if kind != "none":
        raise UnsupportedVariantError(f"no charge combination for extension {kind}")
    if model.kernel == "rational":
        d = model.spins
        M = N - d.sum()
        const = 2.0 * float((e * d).sum()) + g * float((d * (d + 1.0)).sum() + M - M * M)
        return 2.0 * e, const
    if model.kernel == "hyperbolic":
        if not model.spin_half:
            raise UnsupportedVariantError("p+ip Hamiltonian is defined for spin-1/2 levels")
        c = 1.0 + g * (N - L / 2.0)
        return e / c, 0.5 * float(e.sum()) + g * float(e.sum()) / (4.0 * c)
    raise UnsupportedVariantError("trigonometric kernel has no Hamiltonian realization here")


def charge_combination(model: ModelSpec, evb: EvbVariables, coefficients: Sequence[float],
                       constant: float = 0.0) -> float:
    q = charge_eigenvalues(model, evb, shifted=False)
    return float(np.dot(np.asarray(coefficients, dtype=float), q) + constant)


def energy_from_lambda(model: ModelSpec, evb: EvbVariables) -> float:
    kind = model.extension.kind
    e = model.eps
    lam = np.asarray(evb.lambdas, dtype=float)
    if kind == "bath":
        return float(np.dot(e, lam))
    if kind == "dicke":
        lam0 = model.extension.eps0 * model.N - evb.g ** 2 * float(lam.sum())
        return lam0 - 0.5 * float(e.sum())
    if kind == "ext_pip":
        kappa = 1.0 / evb.g
        return -model.L * kappa / 2.0 + 0.5 * model.extension.eta0 ** 2 * float((1.0 / e).sum()) - 0.5 * float(lam.sum())
    c, const = hamiltonian_coefficients(model)
    return charge_combination(model, evb, c, const)


def state_energy(model: ModelSpec, roots) -> float:
    """
    - BCS: 2 Σ v_a
    - p+ip: (1 + G) Σ v_a with G the p+ip coupling
    - dicke: Σ v_a - Σ ε_i / 2
    - central spin, ext-p+ip: through the charge combination of Λ
    """
    v = _roots(roots)
    kind = model.extension.kind
    if kind == "none" and model.kernel == "rational":
        return float(2.0 * np.sum(v).real)
    if kind == "none" and model.kernel == "hyperbolic":
        if not model.spin_half:
            raise UnsupportedVariantError("p+ip energy is defined for spin-1/2 levels")
        G = pip_coupling(model)
        return float(((1.0 + G) * np.sum(v)).real)
    if kind == "dicke":
        return float(np.sum(v).real) - 0.5 * float(model.eps.sum())
    if kind in ("central_spin", "ext_pip"):
        return energy_from_lambda(model, lambda_from_roots(model, v))
    raise UnsupportedVariantError(f"no state energy for kernel={model.kernel}, extension={kind}")
