# rgbethe/evb.py
from __future__ import annotations

from typing import Optional

import numpy as np

from rgbethe.config import G_SMALL_FACTOR
from rgbethe.errors import CapacityError, UnsupportedVariantError
from rgbethe.kernels import x_matrix, z_matrix
from rgbethe.schema import ModelSpec, coupling_parameter
from rgbethe.states import EvbVariables, OccupationPattern

# ----------------------------
# Quadratic eigenvalue-based systems, one per model variant.
#
# Every system works on scaled unknowns x at a continuation parameter p
# (g, G or 1/κ) and exposes the residual, its Jacobian ∂F/∂x, the
# parameter derivative ∂F/∂p and a weak-coupling seed.
# ----------------------------


class EvbSystem:
    kind = "base"

    def __init__(self, model: ModelSpec):
        self.model = model
        self.eps = model.eps
        self.L = model.L
        self.N = model.N

    @property
    def size(self) -> int:
        return self.L

    def residual(self, x: np.ndarray, p: float) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x: np.ndarray, p: float) -> np.ndarray:
        raise NotImplementedError

    def dparam(self, x: np.ndarray, p: float) -> np.ndarray:
        raise NotImplementedError

    def extra_residuals(self, x: np.ndarray, p: float) -> np.ndarray:
        return np.zeros(0)

    def seed0(self, pattern: OccupationPattern) -> np.ndarray:
        raise NotImplementedError

    def check_pattern(self, pattern: OccupationPattern) -> OccupationPattern:
        return pattern.check(self.model.capacities, self.N)

    def seed(self, pattern: OccupationPattern, p: float) -> np.ndarray:
        """Two-term weak-coupling expansion x0 - p J0⁻¹ ∂F/∂p."""
        self.check_pattern(pattern)
        x0 = self.seed0(pattern)
        J0 = self.jacobian(x0, 0.0)
        rhs = self.dparam(x0, 0.0)
        return x0 - p * np.linalg.solve(J0, rhs)

    def curvature(self, x: np.ndarray, p: float, xp: np.ndarray) -> np.ndarray:
        """d²F/dp² along the solution branch minus the J x'' part (exact for polynomial systems)."""
        h = 1e-4 * max(1.0, abs(p))

        def total(t):
            return self.jacobian(x + t * xp, p + t) @ xp + self.dparam(x + t * xp, p + t)

        return (total(h) - total(-h)) / (2.0 * h)

    def to_evb(self, x: np.ndarray, p: float, iterations: int = 0) -> EvbVariables:
        raise NotImplementedError

    def from_evb(self, evb: EvbVariables) -> np.ndarray:
        raise NotImplementedError


# ----------------------------
# spin-1/2 Gaudin (rational / hyperbolic, incl. central spin)
# ----------------------------
class SpinHalfSystem(EvbSystem):
    """
    F_i = y_i² + 2y_i - g Σ_j Z_ij (y_i - y_j) - g² Γ N (L - N),  y = gΛ
    """
    kind = "spin_half"

    def __init__(self, model: ModelSpec):
        super().__init__(model)
        k = model.gaudin_kernel
        self.Z = z_matrix(k, self.eps)
        self.Zsum = self.Z.sum(axis=1)
        self.cst = k.gamma * self.N * (self.L - self.N)

    def _spread(self, y):
        return (self.Z * (y[:, None] - y[None, :])).sum(axis=1)

    def residual(self, y, g):
        return y * y + 2.0 * y - g * self._spread(y) - g * g * self.cst

    def jacobian(self, y, g):
        J = g * self.Z
        J[np.diag_indices(self.L)] = 2.0 * y + 2.0 - g * self.Zsum
        return J

    def dparam(self, y, g):
        return -self._spread(y) - 2.0 * g * self.cst

    def curvature(self, y, g, yp):
        return 2.0 * yp * yp - 2.0 * self._spread(yp) - 2.0 * self.cst

    def extra_residuals(self, y, g):
        return np.array([y.sum() + 2.0 * self.N])

    def seed0(self, pattern):
        return -2.0 * np.asarray(pattern.counts, dtype=float)

    def to_evb(self, y, g, iterations=0):
        return EvbVariables(lambdas=y / g, g=g, iterations=iterations)

    def from_evb(self, evb):
        return np.asarray(evb.lambdas) * evb.g


# ----------------------------
# mixed spin-1/2 and spin-1 levels
# ----------------------------
class SpinOneSystem(EvbSystem):
    """
    Unknowns (y, w) with y = gΛ on all levels and w = g²Λ⁽²⁾ on spin-1 levels,
    Λ⁽²⁾_i = Σ_a Z(ε_i, v_a)².
    """
    kind = "spin_one"

    def __init__(self, model: ModelSpec):
        super().__init__(model)
        s = model.spins
        if np.any((np.abs(s - 0.5) > 1e-12) & (np.abs(s - 1.0) > 1e-12)):
            raise UnsupportedVariantError("eigenvalue-based equations implemented for s ∈ {1/2, 1}; use direct_solve")
        k = model.gaudin_kernel
        self.s = s
        self.gam = k.gamma
        self.Z = z_matrix(k, self.eps)
        self.ones = np.where(np.abs(s - 1.0) < 1e-12)[0]
        self.M = len(self.ones)
        self.S = s.sum() - s                               # Σ_{j≠i} s_j
        self.c1 = self.gam * self.N * (1.0 - self.N + 2.0 * self.S)
        self.sZ = self.Z * s[None, :]                      # s_j Z_ij
        self.sZ2 = (self.Z ** 2 + self.gam) * s[None, :]
        np.fill_diagonal(self.sZ2, 0.0)

    @property
    def size(self):
        return self.L + self.M

    def _split(self, x):
        return x[: self.L], x[self.L:]

    def residual(self, x, g):
        y, w = self._split(x)
        dy = y[:, None] - y[None, :]
        f1 = y * y + 2.0 * y - 2.0 * g * (self.sZ * dy).sum(axis=1) - g * g * self.c1
        f1[self.ones] += w
        o = self.ones
        W = w + g * g * self.gam * self.N
        f2 = 2.0 * (y[o] + 1.0) * W - 2.0 * (
            g * g * (self.sZ2[o] * dy[o]).sum(axis=1) + g * self.sZ[o].sum(axis=1) * W
        )
        return np.concatenate([f1, f2])

    def jacobian(self, x, g):
        y, w = self._split(x)
        L, o = self.L, self.ones
        J = np.zeros((self.size, self.size))
        J[:L, :L] = 2.0 * g * self.sZ
        J[np.arange(L), np.arange(L)] = 2.0 * y + 2.0 - 2.0 * g * self.sZ.sum(axis=1)
        for m, i in enumerate(o):
            J[i, L + m] = 1.0
        W = w + g * g * self.gam * self.N
        for m, i in enumerate(o):
            row = L + m
            J[row, :L] = 2.0 * g * g * self.sZ2[i]
            J[row, i] = 2.0 * W[m] - 2.0 * g * g * self.sZ2[i].sum()
            J[row, L + m] = 2.0 * (y[i] + 1.0) - 2.0 * g * self.sZ[i].sum()
        return J

    def dparam(self, x, g):
        y, w = self._split(x)
        o = self.ones
        dy = y[:, None] - y[None, :]
        f1 = -2.0 * (self.sZ * dy).sum(axis=1) - 2.0 * g * self.c1
        W = w + g * g * self.gam * self.N
        Wg = 2.0 * g * self.gam * self.N
        f2 = 2.0 * (y[o] + 1.0) * Wg - 2.0 * (
            2.0 * g * (self.sZ2[o] * dy[o]).sum(axis=1)
            + self.sZ[o].sum(axis=1) * W
            + g * self.sZ[o].sum(axis=1) * Wg
        )
        return np.concatenate([f1, f2])

    def extra_residuals(self, x, g):
        y, _ = self._split(x)
        return np.array([(self.s * y).sum() + self.N])

    def seed0(self, pattern):
        n = np.asarray(pattern.counts, dtype=float)
        y = -n / self.s
        w = np.array([1.0 if n[i] == 1 else 0.0 for i in self.ones])
        return np.concatenate([y, w])

    def to_evb(self, x, g, iterations=0):
        y, w = self._split(x)
        lam2 = np.zeros(self.L)
        lam2[self.ones] = w / (g * g)
        return EvbVariables(lambdas=y / g, g=g, lambda2=lam2, iterations=iterations)

    def from_evb(self, evb):
        y = np.asarray(evb.lambdas) * evb.g
        lam2 = evb.lambda2 if evb.lambda2 is not None else np.zeros(self.L)
        return np.concatenate([y, np.asarray(lam2)[self.ones] * evb.g ** 2])


# ----------------------------
# Dicke: spins coupled to one boson mode
# ----------------------------
class DickeSystem(EvbSystem):
    """
    y = G²Λ,  F_i = y_i² + y_i(ε_i - ε₀) - G²N - G² Σ_j (y_i - y_j)/(ε_i - ε_j)
    """
    kind = "dicke"

    def __init__(self, model: ModelSpec):
        super().__init__(model)
        self.eps0 = model.extension.eps0
        self.R = x_matrix(model.gaudin_kernel, self.eps)   # 1/(ε_i - ε_j)
        self.Rsum = self.R.sum(axis=1)

    def check_pattern(self, pattern):
        pattern.check(self.model.capacities)
        if pattern.N > self.N:
            raise CapacityError(f"pattern excites {pattern.N} spins but only N={self.N} quanta")
        return pattern

    def residual(self, y, G):
        spread = (self.R * (y[:, None] - y[None, :])).sum(axis=1)
        return y * y + y * (self.eps - self.eps0) - G * G * self.N - G * G * spread

    def jacobian(self, y, G):
        J = G * G * self.R
        J[np.diag_indices(self.L)] = 2.0 * y + (self.eps - self.eps0) - G * G * self.Rsum
        return J

    def dparam(self, y, G):
        spread = (self.R * (y[:, None] - y[None, :])).sum(axis=1)
        return -2.0 * G * self.N - 2.0 * G * spread

    def seed0(self, pattern):
        n = np.asarray(pattern.counts, dtype=float)
        return n * (self.eps0 - self.eps)

    def to_evb(self, y, G, iterations=0):
        lam0 = self.eps0 * self.N - float(y.sum())
        return EvbVariables(lambdas=y / (G * G), g=G, lambda0=lam0, iterations=iterations)

    def from_evb(self, evb):
        return np.asarray(evb.lambdas) * evb.g ** 2

    def extra_residuals(self, y, G):
        return np.zeros(1)


# ----------------------------
# extended p+ip: hyperbolic spins coupled to one boson mode
# ----------------------------
class ExtPipSystem(EvbSystem):
    """
    Continuation in t = 1/κ with y = tΛ:
      F_i = y_i² + 2y_i + t²N(L-N) - tΣ_j y_j - 2tN - 2η₀²(t y_i + t²N)/ε_i - t Σ_j Z_ij (y_i - y_j)
    """
    kind = "ext_pip"

    def __init__(self, model: ModelSpec):
        super().__init__(model)
        self.eta0 = model.extension.eta0
        self.Z = z_matrix(model.gaudin_kernel, self.eps)
        self.Zsum = self.Z.sum(axis=1)
        self.a = self.eta0 ** 2 / self.eps

    def check_pattern(self, pattern):
        pattern.check(self.model.capacities)
        if pattern.N > self.N:
            raise CapacityError(f"pattern excites {pattern.N} spins but only N={self.N} quanta")
        return pattern

    def residual(self, y, t):
        N, L = self.N, self.L
        spread = (self.Z * (y[:, None] - y[None, :])).sum(axis=1)
        return (y * y + 2.0 * y + t * t * N * (L - N) - t * y.sum() - 2.0 * t * N
                - 2.0 * self.a * (t * y + t * t * N) - t * spread)

    def jacobian(self, y, t):
        J = t * self.Z - t
        J[np.diag_indices(self.L)] = 2.0 * y + 2.0 - t - 2.0 * self.a * t - t * self.Zsum
        return J

    def dparam(self, y, t):
        N, L = self.N, self.L
        spread = (self.Z * (y[:, None] - y[None, :])).sum(axis=1)
        return 2.0 * t * N * (L - N) - y.sum() - 2.0 * N - 2.0 * self.a * (y + 2.0 * t * N) - spread

    def seed0(self, pattern):
        return -2.0 * np.asarray(pattern.counts, dtype=float)

    def to_evb(self, y, t, iterations=0):
        lam = y / t
        lam0 = 0.5 * float(lam.sum()) + self.N / t
        return EvbVariables(lambdas=lam, g=t, lambda0=lam0, iterations=iterations)

    def from_evb(self, evb):
        return np.asarray(evb.lambdas) * evb.g

    def extra_residuals(self, y, t):
        return np.zeros(1)


# ----------------------------
# bath-coupled p+ip: charges q_k obey a closed quadratic set
# ----------------------------
class BathSystem(EvbSystem):
    """
    F_k = q_k² - q_k - γ²/η_k - G Σ_{k'≠k} η_k' (q_k - q_k')/(η_k - η_k')
    """
    kind = "bath"

    def __init__(self, model: ModelSpec):
        super().__init__(model)
        self.gamma = model.extension.gamma
        L = self.L
        self.W = np.zeros((L, L))
        for k in range(L):
            for kp in range(L):
                if k != kp:
                    self.W[k, kp] = self.eps[kp] / (self.eps[k] - self.eps[kp])
        self.Wsum = self.W.sum(axis=1)

    def check_pattern(self, pattern):
        return pattern.check(self.model.capacities)

    def residual(self, q, G):
        spread = (self.W * (q[:, None] - q[None, :])).sum(axis=1)
        return q * q - q - self.gamma ** 2 / self.eps - G * spread

    def jacobian(self, q, G):
        J = G * self.W
        J[np.diag_indices(self.L)] = 2.0 * q - 1.0 - G * self.Wsum
        return J

    def dparam(self, q, G):
        return -(self.W * (q[:, None] - q[None, :])).sum(axis=1)

    def seed0(self, pattern):
        n = np.asarray(pattern.counts, dtype=float)
        root = np.sqrt(0.25 + self.gamma ** 2 / self.eps)
        return 0.5 + np.where(n > 0, root, -root)

    def to_evb(self, q, G, iterations=0):
        return EvbVariables(lambdas=q, g=G, iterations=iterations)

    def from_evb(self, evb):
        return np.asarray(evb.lambdas, dtype=float)


def system_for(model: ModelSpec) -> EvbSystem:
    kind = model.extension.kind
    if kind == "dicke":
        return DickeSystem(model)
    if kind == "ext_pip":
        return ExtPipSystem(model)
    if kind == "bath":
        return BathSystem(model)
    if model.kernel == "trigonometric":
        raise UnsupportedVariantError("trigonometric kernel is residual-check only")
    if model.spin_half:
        return SpinHalfSystem(model)
    return SpinOneSystem(model)


def default_small_parameter(model: ModelSpec, target: Optional[float] = None) -> float:
    """Weak-coupling starting point, signed like the target."""
    target = coupling_parameter(model) if target is None else target
    kind = model.extension.kind
    if kind == "ext_pip":
        scale = 1.0 / (1.0 + model.extension.eta0 ** 2 / float(model.eps.min()) + model.L)
    elif kind == "bath" or model.kernel == "hyperbolic":
        scale = 1.0 / max(model.L, 1)
    else:
        scale = model.mean_spacing
    sign = -1.0 if target < 0 else 1.0
    return sign * G_SMALL_FACTOR * scale
