# rgbethe/cauchy.py
from __future__ import annotations

from itertools import combinations, permutations
from typing import Tuple

import numpy as np

# ----------------------------
# Cauchy matrices C_iα = 1/(ε_i - x_α)
#
# Every determinant overlap in this package is a Cauchy structure in disguise;
# these helpers are kept standalone so the identities can be checked directly.
# ----------------------------


def _vec(a) -> np.ndarray:
    return np.asarray(a, dtype=complex).reshape(-1)


def cauchy_matrix(eps, x) -> np.ndarray:
    e, xx = _vec(eps), _vec(x)
    return 1.0 / (e[:, None] - xx[None, :])


def permanent_dense(A) -> complex:
    """Ryser's formula with a Gray-code walk, O(2ⁿ n). Square matrices only."""
    A = np.asarray(A, dtype=complex)
    n, m = A.shape
    if n != m:
        raise ValueError(f"permanent needs a square matrix, got {n}x{m}")
    if n == 0:
        return 1.0 + 0.0j
    row_sums = np.zeros(n, dtype=complex)
    total = 0.0 + 0.0j
    gray_prev = 0
    for k in range(1, 1 << n):
        gray = k ^ (k >> 1)
        j = (gray ^ gray_prev).bit_length() - 1
        if gray & (1 << j):
            row_sums += A[:, j]
        else:
            row_sums -= A[:, j]
        gray_prev = gray
        sign = -1.0 if bin(gray).count("1") % 2 else 1.0
        total += sign * np.prod(row_sums)
    return (-1) ** n * total


def permanent_naive(A) -> complex:
    """Sum over injective maps rows → columns; rectangular n ≤ m allowed."""
    A = np.asarray(A, dtype=complex)
    n, m = A.shape
    if n > m:
        A = A.T
        n, m = m, n
    if n == 0:
        return 1.0 + 0.0j
    total = 0.0 + 0.0j
    for cols in permutations(range(m), n):
        total += np.prod(A[np.arange(n), list(cols)])
    return total


def cauchy_det(eps, x) -> complex:
    """Closed form ∏_{j<i}(ε_i-ε_j) ∏_{α<β}(x_α-x_β) / ∏_{i,α}(ε_i-x_α)."""
    e, xx = _vec(eps), _vec(x)
    if len(e) != len(xx):
        raise ValueError(f"square Cauchy matrix needs equal sizes, got {len(e)} and {len(xx)}")
    num = 1.0 + 0.0j
    for j, i in combinations(range(len(e)), 2):
        num *= e[i] - e[j]
    for a, b in combinations(range(len(xx)), 2):
        num *= xx[a] - xx[b]
    return num / np.prod(e[:, None] - xx[None, :])


def _d_factors(e: np.ndarray, xx: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """D_ε = q(ε_i)/p'(ε_i), D_x = p(x_α)/q'(x_α) with p(z) = ∏(z-ε), q(z) = ∏(z-x)."""
    de = np.empty(len(e), dtype=complex)
    for i, ei in enumerate(e):
        de[i] = np.prod(ei - xx) / np.prod(np.delete(ei - e, i))
    dx = np.empty(len(xx), dtype=complex)
    for a, xa in enumerate(xx):
        dx[a] = np.prod(xa - e) / np.prod(np.delete(xa - xx, a))
    return de, dx


def cauchy_inverse(eps, x) -> np.ndarray:
    """C⁻¹ = -D_x Cᵀ D_ε."""
    e, xx = _vec(eps), _vec(x)
    if len(e) != len(xx):
        raise ValueError(f"square Cauchy matrix needs equal sizes, got {len(e)} and {len(xx)}")
    de, dx = _d_factors(e, xx)
    C = cauchy_matrix(e, xx)
    return -(dx[:, None] * C.T * de[None, :])


def borchardt(eps, x) -> complex:
    """per(C) = det(C∘C)/det(C)."""
    C = cauchy_matrix(eps, x)
    return np.linalg.det(C * C) / cauchy_det(eps, x)


def j_epsilon(eps, x) -> np.ndarray:
    """
    (J_ε)_ii = Σ_α 1/(ε_i - x_α) - Σ_{k≠i} 1/(ε_i - ε_k)
    (J_ε)_ij = -1/(ε_i - ε_j)
    """
    e, xx = _vec(eps), _vec(x)
    n = len(e)
    D = e[:, None] - e[None, :]
    np.fill_diagonal(D, 1.0)
    R = 1.0 / D
    np.fill_diagonal(R, 0.0)
    J = -R
    J[np.diag_indices(n)] = (1.0 / (e[:, None] - xx[None, :])).sum(axis=1) - R.sum(axis=1)
    return J


def j_x(eps, x) -> np.ndarray:
    """
    (J_x)_αα = -Σ_i 1/(x_α - ε_i) + Σ_{κ≠α} 1/(x_α - x_κ)
    (J_x)_αβ = -1/(x_α - x_β)
    """
    e, xx = _vec(eps), _vec(x)
    n = len(xx)
    D = xx[:, None] - xx[None, :]
    np.fill_diagonal(D, 1.0)
    R = 1.0 / D
    np.fill_diagonal(R, 0.0)
    J = -R
    J[np.diag_indices(n)] = -(1.0 / (xx[:, None] - e[None, :])).sum(axis=1) + R.sum(axis=1)
    return J


def sylvester_pair(eps, x) -> Tuple[complex, complex]:
    """(det(1 + J_x), det(1 + J_ε)); equal for any sizes of the two sets."""
    Jx = j_x(eps, x)
    Je = j_epsilon(eps, x)
    lhs = np.linalg.det(np.eye(len(Jx)) + Jx) if len(Jx) else 1.0 + 0.0j
    rhs = np.linalg.det(np.eye(len(Je)) + Je) if len(Je) else 1.0 + 0.0j
    return complex(lhs), complex(rhs)


def hadamard_cube_ratio(eps, x) -> Tuple[complex, complex]:
    """(det[2 C∘C∘C] / det[C∘C], det[J_x + Cᵀ J_ε⁻¹ C]); equal for square C."""
    C = cauchy_matrix(eps, x)
    lhs = np.linalg.det(2.0 * C * C * C) / np.linalg.det(C * C)
    Je = j_epsilon(eps, x)
    rhs = np.linalg.det(j_x(eps, x) + C.T @ np.linalg.solve(Je, C))
    return complex(lhs), complex(rhs)
