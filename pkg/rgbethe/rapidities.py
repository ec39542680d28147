# rgbethe/rapidities.py
from __future__ import annotations

import logging
from math import factorial
from typing import Literal, Optional, Tuple

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.optimize import linear_sum_assignment

from rgbethe.config import NEWTON_MAX_ITER, STEP_GROW, CLEAN_STEPS_TO_GROW, TAU_CONJ, TAU_POLISH
from rgbethe.equations import bethe_residuals
from rgbethe.errors import (
    CoincidentArgumentsError,
    ConfigError,
    NoConvergenceError,
    PolishError,
    SingularPointError,
    UnsupportedVariantError,
)
from rgbethe.evb import default_small_parameter
from rgbethe.schema import ModelSpec, coupling_parameter
from rgbethe.states import BetheRoots, EvbVariables, OccupationPattern

logger = logging.getLogger(__name__)

Route = Literal["auto", "monomial", "ode"]

MONOMIAL_MAX_N = 24
COND_WARN = 1e12
ELLIPSE_R = 2.0


# ----------------------------
# Conjugation closure
# ----------------------------
def close_conjugates(v: np.ndarray, tol: float = TAU_CONJ) -> np.ndarray:
    """Snap near-real roots to the axis and symmetrize conjugate partners."""
    v = np.array(v, dtype=complex)
    if len(v) == 0:
        return v
    near = np.abs(v.imag) <= tol * (1.0 + np.abs(v))
    v[near] = v[near].real
    up = np.where(v.imag > 0)[0]
    dn = np.where(v.imag < 0)[0]
    if len(up) != len(dn):
        logger.warning("root set has %d upper and %d lower roots; closure not enforced", len(up), len(dn))
        return v
    if len(up):
        cost = np.abs(v[up][:, None] - np.conj(v[dn])[None, :])
        r, c = linear_sum_assignment(cost)
        for a, b in zip(up[r], dn[c]):
            m = 0.5 * (v[a] + np.conj(v[b]))
            v[a] = m
            v[b] = np.conj(m)
    return v


# ----------------------------
# Polynomial data per variant
# ----------------------------
def _support(model: ModelSpec) -> Tuple[float, float]:
    e = model.eps
    lo, hi = float(e.min()), float(e.max())
    centre = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    if half <= 0.0:
        half = max(abs(centre), 1.0)
    return centre, half


def _log_derivatives(model: ModelSpec, evb: EvbVariables, N: int):
    """
    r_i = P'(e_i)/P(e_i) and, on spin-1 levels, σ_i = Σ_a 1/(e_i - v_a)².
    Hyperbolic Λ_i = -N + 2η_i Σ_a 1/(η_i - v_a).
    """
    lam = np.asarray(evb.lambdas, dtype=float)
    e = model.eps
    hyper = model.kernel == "hyperbolic"
    r = (lam + N) / (2.0 * e) if hyper else lam.copy()
    sigma = None
    if evb.lambda2 is not None:
        lam2 = np.asarray(evb.lambda2, dtype=float)
        sigma = (lam2 - N + 4.0 * e * r) / (4.0 * e * e) if hyper else lam2.copy()
    return r, sigma


def _ode_terms(model: ModelSpec, evb: EvbVariables, N: int):
    """
    P(z) = Π(z - v_a) solves
      z^p P'' + (α₀ + α₁z + Σ β_i/(e_i - z)) P' - (d∞ + Σ c_i/(e_i - z)) P = 0
    """
    kind = model.extension.kind
    e = model.eps
    s = model.spins
    lam = np.asarray(evb.lambdas, dtype=float)
    if kind == "dicke":
        G2 = evb.g ** 2
        a1 = 1.0 / G2
        return dict(p=0, a0=-model.extension.eps0 / G2, a1=a1, beta=2.0 * s, c=2.0 * s * lam, dinf=a1 * N)
    if kind == "ext_pip":
        kappa = 1.0 / evb.g
        a1 = kappa - s.sum() - N + 1.0
        return dict(p=2, a0=-model.extension.eta0 ** 2 - float((2.0 * s * e).sum()), a1=a1,
                    beta=2.0 * s * e * e, c=s * e * (lam + N), dinf=N * (N - 1.0 + a1))
    g = evb.g
    if model.kernel == "hyperbolic":
        return dict(p=1, a0=1.0 / g - s.sum() - N + 1.0, a1=0.0, beta=2.0 * s * e, c=s * (lam + N), dinf=0.0)
    return dict(p=0, a0=2.0 / g, a1=0.0, beta=2.0 * s, c=2.0 * s * lam, dinf=0.0)


def _monomial_roots(model: ModelSpec, evb: EvbVariables, N: int) -> np.ndarray:
    centre, half = _support(model)
    t = (model.eps - centre) / half
    r, sigma = _log_derivatives(model, evb, N)
    k = np.arange(N + 1)
    tk = t[:, None] ** k[None, :]
    dtk = np.zeros_like(tk)
    dtk[:, 1:] = k[1:] * t[:, None] ** (k[1:] - 1)
    rows = [dtk - half * r[:, None] * tk]
    if sigma is not None:
        ones = np.where(np.abs(model.spins - 1.0) < 1e-12)[0]
        if len(ones):
            d2 = np.zeros_like(tk)
            d2[:, 2:] = k[2:] * (k[2:] - 1) * t[:, None] ** (k[2:] - 2)
            w = half * half * (r ** 2 - sigma)
            rows.append((d2 - w[:, None] * tk)[ones])
    A = np.vstack(rows)
    A = A / np.maximum(np.abs(A).max(axis=1, keepdims=True), 1e-300)
    lhs, rhs = A[:, :N], -A[:, N]
    cond = float(np.linalg.cond(lhs))
    if cond > COND_WARN:
        logger.warning("monomial root polynomial ill-conditioned (cond=%.2e, N=%d)", cond, N)
    a, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    coeffs = np.concatenate([[1.0], a[::-1]])
    return centre + half * np.roots(coeffs)


def _aberth(c: np.ndarray, t: np.ndarray, iters: int = 50) -> np.ndarray:
    dc = C.chebder(c)
    t = np.array(t, dtype=complex)
    for _ in range(iters):
        f = C.chebval(t, c)
        fp = C.chebval(t, dc)
        ratio = f / np.where(fp == 0, 1e-300, fp)
        diff = t[:, None] - t[None, :]
        np.fill_diagonal(diff, np.inf)
        corr = ratio / (1.0 - ratio * (1.0 / diff).sum(axis=1))
        t = t - corr
        if np.max(np.abs(corr)) < 1e-15 * (1.0 + np.max(np.abs(t))):
            break
    return t


def _ode_roots(model: ModelSpec, evb: EvbVariables, N: int) -> np.ndarray:
    """Chebyshev-basis collocation of the root-polynomial ODE on an ellipse around the levels."""
    centre, half = _support(model)
    e = model.eps
    M = 2 * (N + model.L) + 8
    theta = 2.0 * np.pi * (np.arange(M) + 0.5) / M
    t = 0.5 * (ELLIPSE_R * np.exp(1j * theta) + np.exp(-1j * theta) / ELLIPSE_R)
    z = centre + half * t

    terms = _ode_terms(model, evb, N)
    pole = 1.0 / (e[None, :] - z[:, None])
    A = terms["a0"] + terms["a1"] * z + pole @ terms["beta"]
    D = terms["dinf"] + pole @ terms["c"]
    w = z ** terms["p"]

    V0 = C.chebvander(t, N)
    eye = np.eye(N + 1)
    V1 = np.column_stack([C.chebval(t, C.chebder(eye[k], 1)) for k in range(N + 1)])
    V2 = np.column_stack([C.chebval(t, C.chebder(eye[k], 2)) for k in range(N + 1)])
    B = (w / half ** 2)[:, None] * V2 + (A / half)[:, None] * V1 - D[:, None] * V0
    col = np.maximum(np.abs(B).max(axis=0), 1e-300)
    B = B / col[None, :]
    B = B / np.maximum(np.abs(B).max(axis=1, keepdims=True), 1e-300)
    _, sv, vh = np.linalg.svd(B)
    if len(sv) > 1 and sv[-1] > 1e-6 * sv[-2]:
        logger.warning("ODE collocation null space is weak (σ_min/σ_next=%.2e)", sv[-1] / sv[-2])
    coef = vh[-1].conj() / col
    coef = coef / coef[np.argmax(np.abs(coef))]
    t_roots = _aberth(coef, C.chebroots(coef))
    return centre + half * t_roots


def roots_from_lambda(model: ModelSpec, evb: EvbVariables, N: Optional[int] = None,
                      route: Route = "auto", polish: bool = True) -> BetheRoots:
    """
    Invert Λ → {v_a}: P'(e_i)/P(e_i) = Λ_i fixes the monic root polynomial.
      - monomial: linear least squares + companion matrix (N ≤ 24)
      - ode: Chebyshev collocation of the differential equation for P
    """
    kind = model.extension.kind
    if kind == "bath":
        raise UnsupportedVariantError("bath rapidities are not reconstructed from charge eigenvalues")
    if model.kernel == "trigonometric":
        raise UnsupportedVariantError("trigonometric kernel is residual-check only")
    N = model.N if N is None else int(N)
    if N == 0:
        return BetheRoots(np.zeros(0, dtype=complex))
    n_rows = model.L
    if evb.lambda2 is not None:
        n_rows += int(np.sum(np.abs(model.spins - 1.0) < 1e-12))
    if route == "auto":
        route = "monomial" if (N <= MONOMIAL_MAX_N and n_rows >= N) else "ode"
    if route == "monomial":
        if n_rows < N:
            raise UnsupportedVariantError(f"monomial route needs at least N={N} conditions, have {n_rows}")
        v = _monomial_roots(model, evb, N)
    else:
        v = _ode_roots(model, evb, N)
    logger.debug("roots_from_lambda: route=%s N=%d", route, N)
    v = close_conjugates(v)
    roots = BetheRoots(v)
    return polish_roots(model, roots) if polish else roots


# ----------------------------
# Newton on the Bethe equations
# ----------------------------
def _residual_scale(model: ModelSpec) -> float:
    if model.extension.kind in ("none", "central_spin"):
        return max(1.0, 1.0 / abs(model.g))
    return 1.0


def _gaudin_jacobian(model: ModelSpec, v: np.ndarray) -> np.ndarray:
    k = model.gaudin_kernel
    e = model.eps
    s = model.spins
    n = len(v)
    J = np.zeros((n, n), dtype=complex)
    for a in range(n):
        _, dv_lev = k.dz(e, v[a])
        J[a, a] = np.sum(s * dv_lev)
        for b in range(n):
            if b == a or (v[a] == 0 and v[b] == 0):
                continue
            du, dv = k.dz(v[b], v[a])
            J[a, a] -= dv
            J[a, b] = -du
    return J


def _fd_jacobian(model: ModelSpec, v: np.ndarray, free: np.ndarray) -> np.ndarray:
    n = len(v)
    J = np.zeros((n, n), dtype=complex)
    for b in np.where(free)[0]:
        h = 1e-7 * (1.0 + abs(v[b]))
        vp = v.copy()
        vm = v.copy()
        vp[b] += h
        vm[b] -= h
        J[:, b] = (bethe_residuals(model, vp) - bethe_residuals(model, vm)) / (2.0 * h)
    return J


def _bethe_jacobian(model: ModelSpec, v: np.ndarray, free: np.ndarray) -> np.ndarray:
    if model.extension.kind in ("none", "central_spin"):
        return _gaudin_jacobian(model, v)
    return _fd_jacobian(model, v, free)


def _separation(model: ModelSpec, v: np.ndarray) -> np.ndarray:
    """Distance of each root to its nearest level or other root."""
    d = np.abs(v[:, None] - model.eps[None, :]).min(axis=1)
    if len(v) > 1:
        vv = np.abs(v[:, None] - v[None, :])
        np.fill_diagonal(vv, np.inf)
        both_zero = (v[:, None] == 0) & (v[None, :] == 0)
        vv[both_zero] = np.inf
        d = np.minimum(d, vv.min(axis=1))
    return d


def _newton_roots(model: ModelSpec, v: np.ndarray, tol: float, max_iter: int,
                  trust: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Complex Newton on the Bethe residuals; exact zeros stay fixed.
    With `trust`, a correction larger than trust × separation is a failure.
    """
    v = np.array(v, dtype=complex)
    free = v != 0 if model.kernel == "hyperbolic" else np.ones(len(v), dtype=bool)
    scale = _residual_scale(model)
    R = bethe_residuals(model, v)
    for it in range(max_iter + 1):
        res = float(np.max(np.abs(R[free]))) if free.any() else 0.0
        if not np.isfinite(res):
            raise NoConvergenceError("Bethe residual left the finite range", res)
        if res < tol * scale:
            return v, R, it
        if it == max_iter:
            break
        J = _bethe_jacobian(model, v, free)
        idx = np.where(free)[0]
        try:
            dv = np.linalg.solve(J[np.ix_(idx, idx)], -R[idx])
        except np.linalg.LinAlgError as exc:
            raise NoConvergenceError("singular Bethe Jacobian", res) from exc
        if trust is not None:
            sep = _separation(model, v)[idx]
            if np.any(np.abs(dv) > trust * sep):
                raise NoConvergenceError("Newton correction exceeds trust radius", res)
        v[idx] += dv
        try:
            R = bethe_residuals(model, v)
        except CoincidentArgumentsError as exc:
            raise NoConvergenceError(f"roots collided during Newton: {exc}", res) from exc
    raise NoConvergenceError(f"Bethe Newton did not converge in {max_iter} iterations", res)


def polish_roots(model: ModelSpec, roots: BetheRoots, tol: float = TAU_POLISH,
                 max_iter: int = 40) -> BetheRoots:
    v = np.asarray(roots.roots, dtype=complex)
    if len(v) == 0:
        return roots
    try:
        v, R, it = _newton_roots(model, v, tol, max_iter)
    except (NoConvergenceError, CoincidentArgumentsError) as exc:
        try:
            R = np.abs(bethe_residuals(model, v))
        except CoincidentArgumentsError:
            R = np.full(len(v), np.inf)
        raise PolishError(f"root polish diverged: {exc}", residuals=[float(x) for x in np.abs(R)]) from exc
    logger.debug("polish_roots: %d iterations, max residual %.2e", it, float(np.max(np.abs(R))))
    return BetheRoots(close_conjugates(v))


# ----------------------------
# Direct continuation (degenerate models)
# ----------------------------
def laguerre_coefficients(n: int, alpha: float) -> np.ndarray:
    """Ascending coefficients of L_n^(α); valid for negative α."""
    out = np.zeros(n + 1)
    for k in range(n + 1):
        binom = 1.0
        for j in range(1, n - k + 1):
            binom *= (alpha + k + j) / j
        out[k] = (-1) ** k * binom / factorial(k)
    return out


def weak_coupling_roots(model: ModelSpec, pattern: OccupationPattern, g: float) -> np.ndarray:
    """n_i roots near level i: v = e_i + κ_i g x, x = -u/2 over the zeros u of L_{n_i}^(-2s_i-1)."""
    pattern.check(model.capacities, model.N)
    e = model.eps
    s = model.spins
    kappa = 2.0 * e if model.kernel == "hyperbolic" else np.ones(model.L)
    out = []
    for i, n in enumerate(pattern.counts):
        if n == 0:
            continue
        coeffs = laguerre_coefficients(n, -2.0 * s[i] - 1.0)
        u = np.roots(coeffs[::-1])
        out.extend(e[i] + kappa[i] * g * (-0.5 * u))
    return np.asarray(out, dtype=complex)


def direct_solve(model: ModelSpec, pattern: OccupationPattern, g_target: Optional[float] = None,
                 step_init: Optional[float] = None, step_min: float = 1e-7,
                 max_iter: int = NEWTON_MAX_ITER, trust: float = 0.5) -> BetheRoots:
    """
    Continuation in g directly on the Bethe equations, any degeneracies.
    Raises SingularPointError where roots merge and the step can no longer shrink.
    """
    kind = model.extension.kind
    if kind not in ("none", "central_spin") or model.kernel == "trigonometric":
        raise UnsupportedVariantError(f"direct_solve supports rational/hyperbolic Gaudin models, not {kind}")
    target = coupling_parameter(model) if g_target is None else float(g_target)
    g = default_small_parameter(model, target)
    m = model.with_g(g)
    v = weak_coupling_roots(m, pattern, g)
    if len(v) == 0:
        return BetheRoots(v)
    try:
        v, _, _ = _newton_roots(m, v, TAU_POLISH, max_iter)
    except NoConvergenceError as exc:
        raise SingularPointError(g, f"weak-coupling start failed: {exc}") from exc

    span = abs(target - g)
    step_max = step_init if step_init is not None else span / 40.0
    step = step_max
    clean = 0
    while abs(target - g) > 1e-15 * max(1.0, abs(target)):
        g_new = target if abs(target - g) <= step else g + np.sign(target - g) * step
        h = g_new - g
        try:
            J = _gaudin_jacobian(m, v)
            dv = np.linalg.solve(J, np.full(len(v), 1.0 / (g * g), dtype=complex))
            m_new = model.with_g(g_new)
            v_new, _, _ = _newton_roots(m_new, v + h * dv, TAU_POLISH, max_iter, trust=trust)
        except (NoConvergenceError, CoincidentArgumentsError, np.linalg.LinAlgError) as exc:
            step *= 0.5
            clean = 0
            logger.debug("direct_solve: step halved to %.3e at g=%.12g (%s)", step, g, exc)
            if step < step_min:
                raise SingularPointError(g, "rapidities merging") from exc
            continue
        g, v, m = g_new, v_new, m_new
        clean += 1
        if clean >= CLEAN_STEPS_TO_GROW:
            step = min(step * STEP_GROW, step_max)
            clean = 0
    return BetheRoots(close_conjugates(v))


# ----------------------------
# Read-Green zero-energy pairs
# ----------------------------
def readgreen_extend(roots: BetheRoots, p: int) -> BetheRoots:
    if p < 0:
        raise ConfigError(f"p must be >= 0, got {p}")
    if p == 0:
        return roots
    return BetheRoots(np.concatenate([np.asarray(roots.roots, dtype=complex), np.zeros(p, dtype=complex)]))


# ----------------------------
# Dual (lowering) representation
# ----------------------------
def _require_rational_half(model: ModelSpec) -> None:
    if model.kernel != "rational" or not model.spin_half or model.extension.kind != "none":
        raise UnsupportedVariantError("dual states are implemented for rational spin-1/2 models")


def dual_lambda(model: ModelSpec, evb: EvbVariables) -> Tuple[ModelSpec, EvbVariables]:
    """Same eigenstate lowered from the polarized state: Λ' = Λ + 2/g at coupling -g, L - N rapidities."""
    _require_rational_half(model)
    g = evb.g
    dual_model = model.model_copy(update={"g": -g, "N": model.L - model.N})
    dual = EvbVariables(lambdas=np.asarray(evb.lambdas) + 2.0 / g, g=-g)
    return dual_model, dual


def dual_roots(model: ModelSpec, evb: EvbVariables) -> BetheRoots:
    dual_model, dual = dual_lambda(model, evb)
    return roots_from_lambda(dual_model, dual)
