# rgbethe/overlaps.py
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from rgbethe.cauchy import borchardt
from rgbethe.config import DENSE_DIM_CAP, TAU_COINCIDE
from rgbethe.dense import bethe_vector_dense, overlap_dense
from rgbethe.ed import SectorBasis, pairing_operator, sector_basis
from rgbethe.errors import (
    BackendDisagreementError,
    CapacityError,
    CoincidentArgumentsError,
    UnsupportedVariantError,
)
from rgbethe.rapidities import roots_from_lambda
from rgbethe.schema import ModelSpec
from rgbethe.states import BetheRoots, EvbVariables, OccupationPattern

logger = logging.getLogger(__name__)

DeterminantKind = Literal[
    "slavnov", "J_L", "K_2N", "gaudin", "izergin_borchardt", "evb_JN",
    "dicke_JM", "ext_pip_JM", "dense", "prefactor",
]

State = Union[EvbVariables, BetheRoots, Sequence[complex], np.ndarray]

BACKEND_REL_TOL = 1e-7


# ----------------------------
# Log-magnitude arithmetic
# ----------------------------
@dataclass(frozen=True)
class OverlapValue:
    """value = phase · exp(log_magnitude); log_magnitude = -inf encodes an exact zero."""
    log_magnitude: float
    phase: complex
    route: str = ""

    @classmethod
    def from_complex(cls, z: complex, route: str = "") -> "OverlapValue":
        z = complex(z)
        if z == 0:
            return cls(-math.inf, 1.0 + 0.0j, route)
        return cls(math.log(abs(z)), z / abs(z), route)

    @classmethod
    def one(cls, route: str = "") -> "OverlapValue":
        return cls(0.0, 1.0 + 0.0j, route)

    @property
    def value(self) -> complex:
        if self.log_magnitude == -math.inf:
            return 0.0 + 0.0j
        if self.log_magnitude > 700.0:
            raise OverflowError(f"|overlap| = exp({self.log_magnitude:.1f}) is not representable")
        return self.phase * math.exp(self.log_magnitude)

    @property
    def real(self) -> float:
        return float(self.value.real)

    def __mul__(self, other: "OverlapValue") -> "OverlapValue":
        route = self.route or other.route
        return OverlapValue(self.log_magnitude + other.log_magnitude, self.phase * other.phase, route)

    def inverse(self) -> "OverlapValue":
        if self.log_magnitude == -math.inf:
            raise ZeroDivisionError("inverse of a vanishing overlap")
        return OverlapValue(-self.log_magnitude, 1.0 / self.phase, self.route)

    def with_route(self, route: str) -> "OverlapValue":
        return OverlapValue(self.log_magnitude, self.phase, route)


def logdet(A: np.ndarray, route: str = "") -> OverlapValue:
    """LU with partial pivoting; the empty matrix has determinant 1."""
    A = np.asarray(A, dtype=complex)
    if A.size == 0:
        return OverlapValue.one(route)
    sign, logabs = np.linalg.slogdet(A)
    if sign == 0:
        return OverlapValue(-math.inf, 1.0 + 0.0j, route)
    return OverlapValue(float(logabs), complex(sign), route)


def logprod(values: Iterable[complex], power: int = 1) -> OverlapValue:
    lm, ph = 0.0, 1.0 + 0.0j
    for x in values:
        x = complex(x)
        if x == 0:
            if power < 0:
                raise ZeroDivisionError("vanishing factor in a denominator")
            return OverlapValue(-math.inf, 1.0 + 0.0j, "prefactor")
        lm += power * math.log(abs(x))
        ph *= (x / abs(x)) ** power
    return OverlapValue(lm, ph, "prefactor")


def _falling(a: float, n: int) -> OverlapValue:
    """∏_{k=1}^{n} (a + 1 - k); for n < 0 this is 1/∏_{k=n+1}^{0} (a + 1 - k)."""
    if n >= 0:
        return logprod(a + 1.0 - k for k in range(1, n + 1))
    return logprod((a + 1.0 - k for k in range(n + 1, 1)), power=-1)


# ----------------------------
# State plumbing
# ----------------------------
def _root_array(x) -> np.ndarray:
    if isinstance(x, BetheRoots):
        return np.asarray(x.roots, dtype=complex)
    return np.asarray(x, dtype=complex).reshape(-1)


def _lambdas(model: ModelSpec, v: np.ndarray) -> np.ndarray:
    e = model.eps.astype(complex)
    if len(v) == 0:
        return np.zeros(model.L, dtype=complex)
    if model.kernel == "hyperbolic":
        return ((e[:, None] + v[None, :]) / (e[:, None] - v[None, :])).sum(axis=1)
    return (1.0 / (e[:, None] - v[None, :])).sum(axis=1)


def _resolve(model: ModelSpec, state: State, need_roots: bool) -> Tuple[Optional[np.ndarray], np.ndarray]:
    """(roots or None, complex Λ)."""
    if isinstance(state, EvbVariables):
        lam = np.asarray(state.lambdas, dtype=complex)
        roots = _root_array(roots_from_lambda(model, state)) if need_roots else None
        return roots, lam
    v = _root_array(state)
    if len(v) != model.N:
        raise CapacityError(f"state has {len(v)} rapidities, model has N={model.N}")
    return v, _lambdas(model, v)


def _require_gaudin_half(model: ModelSpec, what: str) -> None:
    if model.extension.kind not in ("none", "central_spin"):
        raise UnsupportedVariantError(f"{what} is defined for Gaudin models, not extension {model.extension.kind}")
    if model.kernel not in ("rational", "hyperbolic"):
        raise UnsupportedVariantError(f"{what} is not implemented for the {model.kernel} kernel")
    if not model.spin_half:
        raise UnsupportedVariantError(f"{what} requires spin-1/2 levels")


def _inv_diff(x: np.ndarray) -> np.ndarray:
    """1/(x_i - x_j) with a zero diagonal."""
    D = x[:, None] - x[None, :]
    np.fill_diagonal(D, 1.0)
    R = 1.0 / D
    np.fill_diagonal(R, 0.0)
    return R


def _tol(model: ModelSpec) -> float:
    return TAU_COINCIDE * max(model.level_spread, 1.0) * 1e3


def _same_set(v: np.ndarray, w: np.ndarray, tol: float) -> bool:
    if len(v) != len(w):
        return False
    a = np.sort_complex(v)
    b = np.sort_complex(w)
    return bool(np.all(np.abs(a - b) <= tol * (1.0 + np.abs(a))))


def _g4_inverse(model: ModelSpec) -> float:
    return 1.0 / model.g + model.L / 2.0 - model.N


def _dense_route(model: ModelSpec, v, w) -> OverlapValue:
    logger.debug("overlap routed to the dense backend")
    return OverlapValue.from_complex(overlap_dense(model, v, w), "dense")


# ----------------------------
# Inner products
# ----------------------------
def overlap_detJ(model: ModelSpec, state_v: State, state_w: State) -> OverlapValue:
    """
    ⟨v|w⟩ with v on-shell, as an L×L determinant in the Λ variables.
      rational:    (-1)^N (g/2)^{L-2N} det J
      hyperbolic:  (-1)^N ∏η/∏v · [∏_{k=1}^{L-2N} (g₄⁻¹+1-k)]⁻¹ det J,  g₄⁻¹ = g⁻¹ + L/2 - N
    """
    _require_gaudin_half(model, "overlap_detJ")
    e = model.eps
    L, N, g = model.L, model.N, model.g
    R = _inv_diff(e.astype(complex))
    hyper = model.kernel == "hyperbolic"
    v, lam_v = _resolve(model, state_v, need_roots=hyper)
    w, lam_w = _resolve(model, state_w, need_roots=False)
    sign = OverlapValue(0.0, complex((-1) ** N), "J_L")

    if not hyper:
        J = -R.copy()
        J[np.diag_indices(L)] = 2.0 / g + lam_v + lam_w - R.sum(axis=1)
        pref = logprod([g / 2.0] * abs(L - 2 * N), power=1 if L >= 2 * N else -1)
        return (sign * pref * logdet(J)).with_route("J_L")

    g4 = _g4_inverse(model)
    tol = _tol(model)
    if np.any(np.abs(v) < tol):
        if w is None:
            w = _root_array(roots_from_lambda(model, state_w))
        if _zero_cluster(v, tol) or _zero_cluster(w, tol):
            return _dense_route(model, v, w)
        return _slavnov_shared(model, v, w).with_route("J_L")
    fall = _falling(g4, L - 2 * N)
    if fall.log_magnitude == -math.inf:
        logger.debug("hyperbolic detJ prefactor singular at g4^-1=%.12g; using detK", g4)
        if w is None:
            raise UnsupportedVariantError("singular hyperbolic prefactor needs explicit rapidities for both states")
        return overlap_detK(model, v, w)
    r_v = (lam_v + N) / (2.0 * e)
    r_w = (lam_w + N) / (2.0 * e)
    J = -R.copy()
    J[np.diag_indices(L)] = g4 / e + r_v + r_w - R.sum(axis=1)
    pref = logprod(e) * logprod(v, power=-1) * fall.inverse()
    return (sign * pref * logdet(J)).with_route("J_L")


def overlap_detK(model: ModelSpec, roots_v: State, roots_w: State) -> OverlapValue:
    """
    ⟨v|w⟩ as a 2N×2N determinant over the combined set x = v ∪ w.
    Coinciding sets reduce to the Gaudin norm.
    """
    _require_gaudin_half(model, "overlap_detK")
    v, _ = _resolve(model, roots_v, need_roots=True)
    w, _ = _resolve(model, roots_w, need_roots=True)
    N = model.N
    if N == 0:
        return OverlapValue.one("K_2N")
    tol = _tol(model)
    if _same_set(v, w, tol):
        return norm_gaudin(model, v).with_route("K_2N")
    if model.kernel == "hyperbolic" and (np.any(np.abs(v) < tol) or np.any(np.abs(w) < tol)):
        if _zero_cluster(v, tol) or _zero_cluster(w, tol):
            return _dense_route(model, v, w)
        return _slavnov_shared(model, v, w).with_route("K_2N")
    x = np.concatenate([v, w])
    D = np.abs(x[:, None] - x[None, :]) + np.eye(2 * N)
    if np.min(D) < tol:
        raise CoincidentArgumentsError("v and w share a rapidity; use overlap_detJ for partially equal sets")
    e = model.eps.astype(complex)
    R = _inv_diff(x)
    lev = (1.0 / (x[:, None] - e[None, :])).sum(axis=1)
    K = -R.copy()
    sign = OverlapValue(0.0, complex((-1) ** N), "K_2N")
    if model.kernel == "rational":
        K[np.diag_indices(2 * N)] = 2.0 / model.g - lev + R.sum(axis=1)
        return (sign * logdet(K)).with_route("K_2N")
    g4 = _g4_inverse(model)
    K[np.diag_indices(2 * N)] = (1.0 + g4) / x - lev + R.sum(axis=1)
    return (sign * logprod(w) * logdet(K)).with_route("K_2N")


def _vandermonde_denominator(v: np.ndarray, w: np.ndarray) -> OverlapValue:
    """∏_{a<b}(v_b - v_a) ∏_{a<b}(w_a - w_b)."""
    n = len(v)
    terms = [v[b] - v[a] for a in range(n) for b in range(a + 1, n)]
    terms += [w[a] - w[b] for a in range(n) for b in range(a + 1, n)]
    return logprod(terms)


def _slavnov_limit_column(model: ModelSpec, v: np.ndarray, a: int) -> np.ndarray:
    """(v_a - w_b) times column b of the alternative Slavnov matrix as w_b → v_a."""
    e = model.eps.astype(complex)
    va = v[a]
    others = np.delete(v, a)
    d = v - va
    d[a] = 1.0
    col = 2.0 / d ** 2
    lev, lev2 = np.sum(1.0 / (va - e)), np.sum(1.0 / (va - e) ** 2)
    pair, pair2 = 2.0 * np.sum(1.0 / (va - others)), 2.0 * np.sum(1.0 / (va - others) ** 2)
    if model.kernel == "hyperbolic":
        col = va * col
        col[a] = -(lev - pair) - va * (pair2 - lev2)
    else:
        col[a] = lev2 - pair2
    return col


def _slavnov_alternative_matrix(model: ModelSpec, v: np.ndarray, w: np.ndarray,
                                match: Optional[Dict[int, int]] = None) -> np.ndarray:
    """Columns b in `match` ({b: a}, w_b = v_a) hold their limit columns."""
    e = model.eps.astype(complex)
    N = len(v)
    hyper = model.kernel == "hyperbolic"
    g4 = _g4_inverse(model) if hyper else 0.0
    match = match or {}
    S = np.empty((N, N), dtype=complex)
    for b in range(N):
        if b in match:
            S[:, b] = _slavnov_limit_column(model, v, match[b])
            continue
        lev = np.sum(1.0 / (w[b] - e))
        for a in range(N):
            pair = 2.0 * np.sum(1.0 / (w[b] - np.delete(v, a)))
            if hyper:
                S[a, b] = (w[b] * (lev - pair) - (g4 + 1.0)) / (v[a] - w[b]) ** 2
            else:
                S[a, b] = (lev - pair - 2.0 / model.g) / (v[a] - w[b]) ** 2
    return S


def _shared_rapidities(v: np.ndarray, w: np.ndarray, tol: float) -> Dict[int, int]:
    """{b: a} for w_b within tol of v_a; each rapidity has at most one partner."""
    close = np.abs(v[:, None] - w[None, :]) < tol
    if np.any(close.sum(axis=0) > 1) or np.any(close.sum(axis=1) > 1):
        raise CoincidentArgumentsError("a rapidity is shared with more than one partner")
    a_idx, b_idx = np.nonzero(close)
    return {int(b): int(a) for a, b in zip(a_idx, b_idx)}


def _zero_cluster(v: np.ndarray, tol: float) -> bool:
    return int(np.sum(np.abs(v) < tol)) >= 2


def _slavnov_shared(model: ModelSpec, v: np.ndarray, w: np.ndarray) -> OverlapValue:
    """
    Alternative Slavnov form for on-shell v where w may share rapidities with v:
    each shared pair w_b = v_a drops its (v_a - w_b) numerator factor and column b
    takes its limit. w = v gives the Gaudin matrix of either kernel.
    """
    N = len(v)
    if N == 0:
        return OverlapValue.one("slavnov")
    match = _shared_rapidities(v, w, _tol(model))
    w = w.copy()
    keep = np.ones((N, N), dtype=bool)
    for b, a in match.items():
        w[b] = v[a]
        keep[a, b] = False
    S = _slavnov_alternative_matrix(model, v, w, match)
    num = logprod((v[:, None] - w[None, :])[keep])
    den = _vandermonde_denominator(v, w)
    return (num * den.inverse() * logdet(S)).with_route("slavnov")


def overlap_slavnov(model: ModelSpec, roots_v: State, roots_w: State,
                    form: Literal["alternative", "standard"] = "alternative") -> OverlapValue:
    """⟨v|w⟩ for on-shell v and arbitrary w as an N×N determinant."""
    _require_gaudin_half(model, "overlap_slavnov")
    v, _ = _resolve(model, roots_v, need_roots=True)
    w, _ = _resolve(model, roots_w, need_roots=True)
    N = len(v)
    if N == 0:
        return OverlapValue.one("slavnov")
    tol = _tol(model)
    if np.min(np.abs(v[:, None] - w[None, :])) < tol:
        raise CoincidentArgumentsError("Slavnov matrix is singular for v_a = w_b; use norm_gaudin or overlap_detJ")
    if _zero_cluster(v, tol) or _zero_cluster(w, tol):
        return _dense_route(model, v, w)
    den =_vandermonde_denominator(v, w)

    if form == "standard":
        if model.kernel != "rational":
            raise UnsupportedVariantError("the standard Slavnov form is implemented for the rational kernel")
        e = model.eps.astype(complex)
        S = np.empty((N, N), dtype=complex)
        for a in range(N):
            others = np.delete(v, a)
            for b in range(N):
                lev = np.sum(1.0 / ((v[a] - e) * (w[b] - e)))
                pair = 2.0 * np.sum(1.0 / ((v[a] - others) * (w[b] - others)))
                S[a, b] = (v[b] - w[b]) / (v[a] - w[b]) * (lev - pair)
        num = logprod(v[a] - w[b] for b in range(N) for a in range(N) if a != b)
        return (num * den.inverse() * logdet(S)).with_route("slavnov")

    S = _slavnov_alternative_matrix(model, v, w)
    num = logprod((v[:, None] - w[None, :]).ravel())
    return (num * den.inverse() * logdet(S)).with_route("slavnov")


def gaudin_matrix(model: ModelSpec, roots) -> np.ndarray:
    """
    G_aa = Σ_i 2s_i/(ε_i - v_a)² - 2 Σ_{c≠a} 1/(v_c - v_a)²,  G_ab = 2/(v_a - v_b)².
    The Jacobian of 2/g + Σ_i 2s_i/(ε_i - v_a) + 2 Σ_{c≠a} 1/(v_a - v_c).
    """
    v = _root_array(roots)
    e = model.eps.astype(complex)
    s2 = 2.0 * model.spins
    R = _inv_diff(v) ** 2
    G = 2.0 * R
    G[np.diag_indices(len(v))] = (s2[None, :] / (e[None, :] - v[:, None]) ** 2).sum(axis=1) - 2.0 * R.sum(axis=1)
    return G


def norm_gaudin(model: ModelSpec, roots: State) -> OverlapValue:
    """⟨v|v⟩ for on-shell v: the Gaudin determinant (rational) or the J_L form (hyperbolic)."""
    if model.extension.kind not in ("none", "central_spin"):
        raise UnsupportedVariantError(f"norm_gaudin is defined for Gaudin models, not {model.extension.kind}")
    v, _ = _resolve(model, roots, need_roots=True)
    if len(v) == 0:
        return OverlapValue.one("gaudin")
    D = np.abs(v[:, None] - v[None, :]) + np.eye(len(v))
    if np.min(D) < _tol(model):
        raise CoincidentArgumentsError("Gaudin norm needs pairwise distinct rapidities")
    if model.kernel == "rational":
        return logdet(gaudin_matrix(model, v), "gaudin")
    if model.kernel == "hyperbolic":
        tol = _tol(model)
        if _zero_cluster(v, tol):
            return _dense_route(model, v, v)
        if np.any(np.abs(v) < tol):
            return _slavnov_shared(model, v, v).with_route("gaudin")
        return overlap_detJ(model, v, v).with_route("gaudin")
    raise UnsupportedVariantError(f"norm_gaudin is not implemented for the {model.kernel} kernel")


# ----------------------------
# Product states
# ----------------------------
def _product_det(eps_occ: np.ndarray, lam_occ: np.ndarray) -> np.ndarray:
    R = _inv_diff(eps_occ.astype(complex))
    J = -R.copy()
    J[np.diag_indices(len(eps_occ))] = lam_occ - R.sum(axis=1)
    return J


def product_state_overlap(model: ModelSpec, roots: State, pattern: OccupationPattern,
                          route: Literal["evb", "izergin"] = "evb") -> OverlapValue:
    """
    ⟨pattern|v⟩ for an uncorrelated spin-1/2 product state.
      evb:      det J_N over the occupied levels with Λ_i on the diagonal
      izergin:  the Borchardt ratio det(C∘C)/det(C), C_ia = 1/(ε_i - v_a)
    Hyperbolic states pick up ∏√η over the occupied levels.
    """
    _require_gaudin_half(model, "product_state_overlap")
    pattern.check(model.capacities, model.N)
    v, lam = _resolve(model, roots, need_roots=(route == "izergin"))
    occ = np.asarray(pattern.occupied, dtype=int)
    e = model.eps
    if len(occ) == 0:
        return OverlapValue.one("evb_JN" if route == "evb" else "izergin_borchardt")
    hyper = model.kernel == "hyperbolic"
    if hyper:
        lam = (lam + model.N) / (2.0 * e)
    scale = logprod(np.sqrt(e[occ])) if hyper else OverlapValue.one()
    if route == "izergin":
        val = OverlapValue.from_complex(borchardt(e[occ], v), "izergin_borchardt")
        return (scale * val).with_route("izergin_borchardt")
    return (scale * logdet(_product_det(e[occ], lam[occ]))).with_route("evb_JN")


def product_state_vector(model: ModelSpec, roots: State, basis: Optional[SectorBasis] = None) -> np.ndarray:
    """All product-state overlaps over the fixed-N sector basis: the Bethe state without rapidity sums."""
    _require_gaudin_half(model, "product_state_vector")
    basis = basis if basis is not None else sector_basis(model, kind="fixed_N", cap=DENSE_DIM_CAP)
    _, lam = _resolve(model, roots, need_roots=False)
    e = model.eps
    hyper = model.kernel == "hyperbolic"
    if hyper:
        lam = (lam + model.N) / (2.0 * e)
    N = int(basis.N)
    if N == 0:
        return np.ones(basis.dim, dtype=complex)
    # spin-1/2 rows hold exactly N ones
    occ = np.nonzero(basis.spin_counts)[1].reshape(basis.dim, N)
    eo = e[occ].astype(complex)
    D = eo[:, :, None] - eo[:, None, :]
    eye = np.eye(N, dtype=bool)
    D[:, eye] = 1.0
    R = 1.0 / D
    R[:, eye] = 0.0
    J = -R
    J[:, eye] = lam[occ] - R.sum(axis=2)
    out = np.linalg.det(J)
    if hyper:
        out = out * np.prod(np.sqrt(e[occ]), axis=1)
    return out


# ----------------------------
# Dual states
# ----------------------------
def dual_ratio(model: ModelSpec, roots: State) -> OverlapValue:
    """
    r with |original⟩ = r · |dual⟩.
      rational:    (-1)^N (g/2)^{L-2N}
      hyperbolic:  (-1)^N ∏√η / (∏v · ∏_{k=1}^{L-2N} (g₄⁻¹+1-k)),  L - 2N > 0
    """
    _require_gaudin_half(model, "dual_ratio")
    L, N, g = model.L, model.N, model.g
    sign = OverlapValue(0.0, complex((-1) ** N), "prefactor")
    if model.kernel == "rational":
        return sign * logprod([g / 2.0] * abs(L - 2 * N), power=1 if L >= 2 * N else -1)
    if L - 2 * N <= 0:
        raise UnsupportedVariantError(f"hyperbolic dual ratio needs L - 2N > 0, got L={L}, N={N}")
    v, _ = _resolve(model, roots, need_roots=True)
    fall = _falling(_g4_inverse(model), L - 2 * N)
    return sign * logprod(np.sqrt(model.eps)) * logprod(v, power=-1) * fall.inverse()


# ----------------------------
# Form factors
# ----------------------------
def _ff_prefactor(model: ModelSpec) -> OverlapValue:
    L, N, g = model.L, model.N, model.g
    return OverlapValue(0.0, complex((-1) ** N)) * logprod([g / 2.0] * abs(L - 2 * N), power=1 if L >= 2 * N else -1)


def _j_minor(model: ModelSpec, lam_v: np.ndarray, lam_w: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    e = model.eps.astype(complex)
    keep = np.array([i for i in range(model.L) if i != k], dtype=int)
    R = _inv_diff(e[keep])
    J = -R.copy()
    J[np.diag_indices(len(keep))] = 2.0 / model.g + lam_v[keep] + lam_w[keep] - R.sum(axis=1)
    return J, keep


def _ff_evb(model: ModelSpec, lam_v, lam_w, k: int, ip: complex) -> complex:
    J, keep = _j_minor(model, lam_v, lam_w, k)
    e = model.eps
    f = -(lam_w[k] - lam_w[keep]) / (e[k] - e[keep])
    d1 = np.linalg.det(J) if J.size else 1.0
    d2 = np.linalg.det(J + np.ones((len(keep), 1)) * f[None, :]) if J.size else 1.0
    return _ff_prefactor(model).value * ((1.0 + lam_w[k]) * d1 - d2) - 0.5 * ip


def _ff_expansion(model: ModelSpec, lam_v, lam_w, w: np.ndarray, k: int, ip: complex) -> complex:
    J, keep = _j_minor(model, lam_v, lam_w, k)
    e = model.eps
    total = 0.0 + 0.0j
    for wb in w:
        Jb = J - np.diag(1.0 / (e[keep] - wb))
        total += (np.linalg.det(Jb) if Jb.size else 1.0) / (e[k] - wb)
    return _ff_prefactor(model).value * total - 0.5 * ip


def _ff_rapidity(model: ModelSpec, v: np.ndarray, w: np.ndarray, k: int, ip: complex) -> complex:
    N = len(v)
    ek = model.eps[k]
    if N == 0:
        return -0.5 * ip
    S = _slavnov_alternative_matrix(model, v, w)
    T = S * np.prod(v[:, None] - w[None, :], axis=0)[None, :]
    col = np.array([np.prod(np.delete(w, b) - w[b]) for b in range(N)])
    Q = (1.0 / (v - ek) ** 2)[:, None] * col[None, :]
    pref = np.prod(v - ek) / np.prod(w - ek)
    den = _vandermonde_denominator(v, w).value
    return pref * (np.linalg.det(T + Q) - np.linalg.det(T)) / den - 0.5 * ip


def formfactor_sz(model: ModelSpec, state_v: State, state_w: State, k: int,
                  backend: Literal["auto", "evb", "rapidity", "expansion"] = "auto") -> OverlapValue:
    """
    ⟨v|S^z_k|w⟩ for on-shell v and w (rational spin-1/2).
    `auto` evaluates the eigenvalue-based and rapidity-based forms and raises
    BackendDisagreementError when they differ by more than 1e-7 relative to ‖v‖‖w‖.
    """
    _require_gaudin_half(model, "formfactor_sz")
    if model.kernel != "rational":
        raise UnsupportedVariantError("form factors are implemented for the rational kernel")
    if not 0 <= k < model.L:
        raise CapacityError(f"level index {k} out of range for L={model.L}")
    need = backend in ("auto", "rapidity", "expansion")
    v, lam_v = _resolve(model, state_v, need_roots=need)
    w, lam_w = _resolve(model, state_w, need_roots=need)
    ip = overlap_detJ(model, state_v, state_w).value

    if backend == "evb":
        return OverlapValue.from_complex(_ff_evb(model, lam_v, lam_w, k, ip), "evb")
    if backend == "expansion":
        return OverlapValue.from_complex(_ff_expansion(model, lam_v, lam_w, w, k, ip), "expansion")
    if backend == "rapidity":
        return OverlapValue.from_complex(_ff_rapidity(model, v, w, k, ip), "rapidity")

    a = _ff_evb(model, lam_v, lam_w, k, ip)
    if len(v) == 0 or _same_set(v, w, _tol(model)):
        return OverlapValue.from_complex(a, "evb")
    b = _ff_rapidity(model, v, w, k, ip)
    scale = math.sqrt(abs(norm_gaudin(model, v).value * norm_gaudin(model, w).value))
    if abs(a - b) > BACKEND_REL_TOL * max(scale, abs(a), 1e-300):
        raise BackendDisagreementError(
            f"S^z_{k} form factor: eigenvalue-based {a:.12e} vs rapidity-based {b:.12e}"
        )
    return OverlapValue.from_complex(a, "evb")


# ----------------------------
# Matrix elements of pairing Hamiltonians
# ----------------------------
def _raised_minors(J_full: np.ndarray, removed: Sequence[int], shifts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """slogdet of J with the `removed` rows/columns dropped and diag(shift) subtracted, per shift row."""
    keep = np.array([k for k in range(J_full.shape[0]) if k not in removed], dtype=int)
    n = len(keep)
    if n == 0:
        return np.ones(len(shifts), dtype=complex), np.zeros(len(shifts))
    J = J_full[np.ix_(keep, keep)].copy()
    # the removed levels leave the diagonal row sums
    J[np.diag_indices(n)] -= J_full[np.ix_(keep, list(removed))].sum(axis=1)
    stack = np.repeat(J[None, :, :], len(shifts), axis=0)
    idx = np.arange(n)
    stack[:, idx, idx] -= shifts[:, keep]
    return np.linalg.slogdet(stack)


def _pairing_expansion(model: ModelSpec, G: np.ndarray, lam_v: np.ndarray, lam_w: np.ndarray,
                       w: np.ndarray) -> OverlapValue:
    """
    ⟨v|H|w⟩ over the inner-product prefactor, for on-shell v.
      S⁻_j|w⟩ = Σ_a C_ja |w∖a⟩ - 2 Σ_{a<b} C_ja C_jb S⁺_j |w∖ab⟩,   C_ja = 1/(ε_j - w_a)
    and ⟨v|S⁺_i…|w∖…⟩ is the J determinant with the raised levels struck out and
    the removed rapidities taken out of Λ^w.
    """
    e = model.eps.astype(complex)
    L, N = model.L, len(w)
    C = 1.0 / (e[:, None] - w[None, :])
    R = _inv_diff(e)
    J_full = -R
    J_full[np.diag_indices(L)] = 2.0 / model.g + lam_v + lam_w - R.sum(axis=1)
    c = 2.0 * model.eps + np.diag(G)
    G_off = G - np.diag(np.diag(G))
    logs, weights = [], []

    single = C.T
    for i in range(L):
        sign, logabs = _raised_minors(J_full, [i], single)
        logs.append(logabs)
        weights.append(sign * (c[i] * C[i] + G_off[i] @ C))

    ia, ib = np.triu_indices(N, 1)
    if len(ia):
        double = (C[:, ia] + C[:, ib]).T
        for i in range(L):
            for j in range(i + 1, L):
                if G_off[i, j] == 0 and G_off[j, i] == 0:
                    continue
                sign, logabs = _raised_minors(J_full, [i, j], double)
                logs.append(logabs)
                weights.append(-2.0 * sign * (G_off[i, j] * C[j, ia] * C[j, ib] + G_off[j, i] * C[i, ia] * C[i, ib]))

    logs_all = np.concatenate(logs)
    weights_all = np.concatenate(weights)
    live = weights_all != 0
    if not np.any(live):
        return OverlapValue.from_complex(0.0, "determinant")
    top = float(np.max(logs_all[live]))
    total = np.sum(weights_all[live] * np.exp(logs_all[live] - top))
    val = OverlapValue.from_complex(total, "determinant")
    return OverlapValue(val.log_magnitude + top, val.phase, "determinant")


def pairing_matrix_element(model: ModelSpec, G_matrix, state_v: State, state_w: State,
                           normalized: bool = True,
                           backend: Literal["auto", "determinant", "dense"] = "auto") -> OverlapValue:
    """
    ⟨v| Σ 2ε_i n_i + Σ_ij G_ij S⁺_i S⁻_j |w⟩ between Bethe states of a rational model, v on-shell.
    The determinant backend (spin-1/2) expands S⁻_j|w⟩ over removed rapidities and
    never builds a state vector; degenerate levels go through dense vectors (capped).
    """
    if model.kernel != "rational" or model.extension.kind not in ("none", "central_spin"):
        raise UnsupportedVariantError("pairing matrix elements are defined for rational Gaudin states")
    if backend == "auto":
        backend = "determinant" if model.spin_half else "dense"
    if backend == "determinant":
        _require_gaudin_half(model, "determinant pairing matrix element")
        _, lam_v = _resolve(model, state_v, need_roots=False)
        w, lam_w = _resolve(model, state_w, need_roots=True)
        if model.N == 0:
            return OverlapValue.from_complex(0.0, "determinant")
        G = np.asarray(G_matrix, dtype=float)
        val = (_ff_prefactor(model) * _pairing_expansion(model, G, lam_v, lam_w, w)).with_route("determinant")
        if not normalized:
            return val
        nv = overlap_detJ(model, state_v, state_v)
        nw = overlap_detJ(model, state_w, state_w)
        return OverlapValue(val.log_magnitude - 0.5 * (nv.log_magnitude + nw.log_magnitude),
                            val.phase / np.sqrt(nv.phase * nw.phase), "determinant")
    v, _ = _resolve(model, state_v, need_roots=True)
    w, _ = _resolve(model, state_w, need_roots=True)
    a, basis = bethe_vector_dense(model, v)
    b, _ = bethe_vector_dense(model, w)
    H = pairing_operator(basis, model.eps, G_matrix).matrix
    val = complex(a @ (H @ b))
    if normalized:
        val /= np.sqrt(complex(a @ a) * complex(b @ b))
    return OverlapValue.from_complex(val, "dense")


# ----------------------------
# Bosonic models
# ----------------------------
def bosonic_overlap(model: ModelSpec, roots: State, n_bosons: int, pattern: OccupationPattern) -> OverlapValue:
    """
    ⟨N₀; pattern|v⟩ with M = N - N₀ flipped spins.
      dicke:    √(N₀!) (-G)^M det J_M,  J_aa = Λ_a - Σ_{c≠a} 1/(ε_a - ε_c),  J_ab = -1/(ε_a - ε_b)
      ext-p+ip: √(N₀!) (-1/η₀)^M ∏√ε_a det J_M,
                J_aa = ½Λ_a - ½Σ_{c≠a} Z(ε_a, ε_c) - (N₀+1)/2,  J_ab = √(ε_aε_b)/(ε_a - ε_b)
    """
    kind = model.extension.kind
    if kind not in ("dicke", "ext_pip"):
        raise UnsupportedVariantError(f"bosonic_overlap needs a bosonic extension, got {kind}")
    v = _root_array(roots)
    N = len(v)
    if n_bosons < 0 or n_bosons > N:
        raise CapacityError(f"boson count {n_bosons} outside [0, {N}]")
    M = N - n_bosons
    pattern.check(model.capacities, M)
    occ = np.asarray(pattern.occupied, dtype=int)
    e = model.eps
    boson = OverlapValue(0.5 * math.lgamma(n_bosons + 1.0), 1.0 + 0.0j)
    if M == 0:
        return boson.with_route(f"{kind}_JM")

    if kind == "dicke":
        lam = (1.0 / (e[:, None] - v[None, :])).sum(axis=1) if N else np.zeros(model.L)
        J = _product_det(e[occ], lam[occ])
        pref = logprod([-model.extension.G] * M)
        return (boson * pref * logdet(J)).with_route("dicke_JM")

    eta0 = model.extension.eta0
    lam = ((e[:, None] + v[None, :]) / (e[:, None] - v[None, :])).sum(axis=1)
    eo = e[occ].astype(complex)
    D = eo[:, None] - eo[None, :]
    np.fill_diagonal(D, 1.0)
    Zm = (eo[:, None] + eo[None, :]) / D
    np.fill_diagonal(Zm, 0.0)
    J = np.sqrt(eo[:, None] * eo[None, :]) / D
    np.fill_diagonal(J, 0.5 * lam[occ] - 0.5 * Zm.sum(axis=1) - 0.5 * (n_bosons + 1.0))
    pref = logprod([-1.0 / eta0] * M) * logprod(np.sqrt(eo))
    return (boson * pref * logdet(J)).with_route("ext_pip_JM")


def bosonic_state_vector(model: ModelSpec, roots: State, basis: Optional[SectorBasis] = None) -> np.ndarray:
    """bosonic_overlap over every label of the bosonic sector basis."""
    v = _root_array(roots)
    basis = basis if basis is not None else sector_basis(model, kind="bosonic_fixed_total", N=len(v), cap=DENSE_DIM_CAP)
    out = np.empty(basis.dim, dtype=complex)
    for r, row in enumerate(basis.counts):
        pat = OccupationPattern(tuple(int(x) for x in row[: basis.L]))
        out[r] = bosonic_overlap(model, v, int(row[basis.L]), pat).value
    return out
