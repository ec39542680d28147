# rgbethe/kernels.py
from __future__ import annotations

from typing import Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from rgbethe.config import TAU_COINCIDE
from rgbethe.errors import CoincidentArgumentsError

# ----------------------------
# Kernel variants
# ----------------------------
#   rational       X = Z = 1/(u-v)                     Γ = 0
#   hyperbolic     X = 2√u√v/(u-v), Z = (u+v)/(u-v)    Γ = -1   (p+ip form, arguments are η = ε²)
#   trigonometric  X = 1/sin(u-v), Z = cot(u-v)        Γ = +1
Variant = Literal["rational", "hyperbolic", "trigonometric"]

GAMMA = {"rational": 0.0, "hyperbolic": -1.0, "trigonometric": 1.0}


class GaudinKernel(BaseModel):
    model_config = ConfigDict(frozen=True)

    variant: Variant = "rational"

    @property
    def gamma(self) -> float:
        return GAMMA[self.variant]

    # vectorized pieces; callers guarantee u != v elementwise
    def x(self, u, v):
        u = np.asarray(u, dtype=complex)
        v = np.asarray(v, dtype=complex)
        if self.variant == "rational":
            return 1.0 / (u - v)
        if self.variant == "hyperbolic":
            return 2.0 * np.sqrt(u) * np.sqrt(v) / (u - v)
        return 1.0 / np.sin(u - v)

    def z(self, u, v):
        u = np.asarray(u, dtype=complex)
        v = np.asarray(v, dtype=complex)
        if self.variant == "rational":
            return 1.0 / (u - v)
        if self.variant == "hyperbolic":
            return (u + v) / (u - v)
        return np.cos(u - v) / np.sin(u - v)

    def dz(self, u, v):
        """(∂Z/∂u, ∂Z/∂v)."""
        u = np.asarray(u, dtype=complex)
        v = np.asarray(v, dtype=complex)
        if self.variant == "rational":
            d = 1.0 / (u - v) ** 2
            return -d, d
        if self.variant == "hyperbolic":
            d = (u - v) ** 2
            return -2.0 * v / d, 2.0 * u / d
        d = 1.0 / np.sin(u - v) ** 2
        return -d, d


RATIONAL = GaudinKernel(variant="rational")
HYPERBOLIC = GaudinKernel(variant="hyperbolic")
TRIGONOMETRIC = GaudinKernel(variant="trigonometric")


def kernel_eval(kernel: GaudinKernel, u: complex, v: complex, scale: float = 1.0) -> Tuple[complex, complex]:
    if abs(u - v) < TAU_COINCIDE * max(scale, 1.0):
        raise CoincidentArgumentsError(f"kernel arguments coincide: u={u!r}, v={v!r}")
    return complex(kernel.x(u, v)), complex(kernel.z(u, v))


def z_matrix(kernel: GaudinKernel, levels) -> np.ndarray:
    """Z(ε_i, ε_j) with a zero diagonal."""
    e = np.asarray(levels, dtype=float)
    L = len(e)
    out = np.zeros((L, L))
    if L < 2:
        return out
    i, j = np.where(~np.eye(L, dtype=bool))
    out[i, j] = kernel.z(e[i], e[j]).real
    return out


def x_matrix(kernel: GaudinKernel, levels) -> np.ndarray:
    e = np.asarray(levels, dtype=float)
    L = len(e)
    out = np.zeros((L, L))
    if L < 2:
        return out
    i, j = np.where(~np.eye(L, dtype=bool))
    out[i, j] = kernel.x(e[i], e[j]).real
    return out


# ----------------------------
# Identity checks
# ----------------------------
class GaudinReport(BaseModel):
    variant: Variant
    samples: int
    seed: int
    antisymmetry: float
    triple: float
    gamma_identity: float

    @property
    def max_violation(self) -> float:
        return max(self.antisymmetry, self.triple, self.gamma_identity)


def check_gaudin_identities(kernel: GaudinKernel, samples: int = 1000, seed: int = 0,
                            z_perturbation: float = 0.0) -> GaudinReport:
    """
    Max relative violation over pseudo-random triples of
      - antisymmetry of X and Z
      - X(u,v)X(v,w) - X(u,w)(Z(u,v)+Z(v,w)) = 0
      - X² - Z² = Γ
    z_perturbation shifts Z by a constant (negative control).
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    rng = np.random.default_rng(seed)
    if kernel.variant == "hyperbolic":
        pts = rng.uniform(0.2, 5.0, size=(samples, 3)) + 1j * rng.uniform(-1.0, 1.0, size=(samples, 3))
    elif kernel.variant == "trigonometric":
        pts = rng.uniform(-1.2, 1.2, size=(samples, 3)) + 1j * rng.uniform(-0.5, 0.5, size=(samples, 3))
    else:
        pts = rng.uniform(-3.0, 3.0, size=(samples, 3)) + 1j * rng.uniform(-1.0, 1.0, size=(samples, 3))
    u, v, w = pts[:, 0], pts[:, 1], pts[:, 2]

    def Z(a, b):
        return kernel.z(a, b) + z_perturbation

    X = kernel.x

    anti_x = np.abs(X(u, v) + X(v, u)) / (np.abs(X(u, v)) + 1.0)
    anti_z = np.abs(Z(u, v) + Z(v, u)) / (np.abs(Z(u, v)) + 1.0)

    lhs = X(u, v) * X(v, w)
    rhs = X(u, w) * (Z(u, v) + Z(v, w))
    triple = np.abs(lhs - rhs) / (np.abs(lhs) + np.abs(rhs) + 1.0)

    x2 = X(u, v) ** 2
    z2 = Z(u, v) ** 2
    gam = np.abs(x2 - z2 - kernel.gamma) / (np.abs(x2) + np.abs(z2) + 1.0)

    return GaudinReport(
        variant=kernel.variant,
        samples=samples,
        seed=seed,
        antisymmetry=float(max(anti_x.max(), anti_z.max())),
        triple=float(triple.max()),
        gamma_identity=float(gam.max()),
    )
