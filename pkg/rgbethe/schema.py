# rgbethe/schema.py
from __future__ import annotations

from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from rgbethe.config import TAU_COINCIDE
from rgbethe.kernels import GAMMA, GaudinKernel, Variant

# ---------- model extensions ----------

class NoExtension(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["none"] = "none"


class BathExtension(BaseModel):
    """p+ip levels coupled to a fermionic bath; G is the p+ip coupling."""
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["bath"] = "bath"
    gamma: float
    G: float


class DickeExtension(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["dicke"] = "dicke"
    eps0: float
    G: float


class ExtPipExtension(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["ext_pip"] = "ext_pip"
    eta0: float
    kappa: float = Field(gt=0.0)


class CentralSpinExtension(BaseModel):
    """H = B_z Q_index with the model's Gaudin coupling g."""
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["central_spin"] = "central_spin"
    index: int = Field(default=0, ge=0)
    B_z: float = 1.0


Extension = Annotated[
    Union[NoExtension, BathExtension, DickeExtension, ExtPipExtension, CentralSpinExtension],
    Field(discriminator="kind"),
]

BOSONIC = ("dicke", "ext_pip")


# ---------- model specification ----------

class ModelSpec(BaseModel):
    """
    Levels are ε_i for rational models and η_i = ε_i² for hyperbolic (p+ip) ones.
    For bosonic extensions and the bath model the continuation coupling lives in
    the extension block; `g` is kept for the Gaudin form of the same model.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    kernel: Variant = "rational"
    gamma: Optional[float] = None
    levels: List[float]
    degeneracies: Optional[List[float]] = None
    g: float = 0.0
    N: int = Field(default=0, ge=0)
    extension: Extension = Field(default_factory=NoExtension)

    @model_validator(mode="after")
    def _check(self) -> "ModelSpec":
        L = len(self.levels)
        if L == 0:
            raise ValueError("levels must not be empty")
        if self.gamma is not None and abs(self.gamma - GAMMA[self.kernel]) > 1e-12:
            raise ValueError(f"gamma={self.gamma} inconsistent with kernel {self.kernel} (Γ={GAMMA[self.kernel]})")
        d = self.d
        if len(d) != L:
            raise ValueError(f"degeneracies has length {len(d)}, expected {L}")
        for i, di in enumerate(d):
            twice = 2.0 * di
            if di <= 0 or abs(twice - round(twice)) > 1e-12:
                raise ValueError(f"degeneracy d[{i}]={di} is not a positive half-integer")
        e = np.asarray(self.levels, dtype=float)
        spread = float(e.max() - e.min()) if L > 1 else 1.0
        if L > 1:
            gaps = np.abs(e[:, None] - e[None, :]) + np.eye(L) * (1.0 + spread)
            bad = np.argwhere(gaps < TAU_COINCIDE * max(spread, 1.0))
            if len(bad):
                i, j = bad[0]
                raise ValueError(f"levels {i} and {j} coincide ({e[i]!r})")
        if self.N > int(round(2.0 * sum(d))):
            raise ValueError(f"N={self.N} exceeds capacity {int(round(2 * sum(d)))}")
        kind = self.extension.kind
        if self.kernel == "hyperbolic" and np.any(e <= 0.0):
            raise ValueError("hyperbolic levels are η_i = ε_i² and must be positive")
        if kind in ("bath", "ext_pip", "dicke") and any(abs(x - 0.5) > 1e-12 for x in d):
            raise ValueError(f"{kind} extension requires all d_i = 1/2")
        if kind in ("bath", "ext_pip") and self.kernel != "hyperbolic":
            raise ValueError(f"{kind} extension requires the hyperbolic kernel")
        if kind == "dicke" and self.kernel != "rational":
            raise ValueError("dicke extension requires the rational kernel")
        if kind == "central_spin" and self.extension.index >= L:
            raise ValueError(f"central spin index {self.extension.index} out of range for L={L}")
        return self

    # ---- convenience ----
    @property
    def L(self) -> int:
        return len(self.levels)

    @property
    def d(self) -> List[float]:
        return list(self.degeneracies) if self.degeneracies is not None else [0.5] * len(self.levels)

    @property
    def eps(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=float)

    @property
    def spins(self) -> np.ndarray:
        return np.asarray(self.d, dtype=float)

    @property
    def capacities(self) -> np.ndarray:
        return np.rint(2.0 * self.spins).astype(int)

    @property
    def gaudin_kernel(self) -> GaudinKernel:
        return GaudinKernel(variant=self.kernel)

    @property
    def spin_half(self) -> bool:
        return all(abs(x - 0.5) < 1e-12 for x in self.d)

    @property
    def level_spread(self) -> float:
        e = self.eps
        return float(e.max() - e.min()) if self.L > 1 else max(abs(float(e[0])), 1.0)

    @property
    def mean_spacing(self) -> float:
        return self.level_spread / max(self.L - 1, 1)

    def with_g(self, g: float) -> "ModelSpec":
        return self.model_copy(update={"g": float(g)})

    def with_pairs(self, N: int) -> "ModelSpec":
        return self.model_copy(update={"N": int(N)})


# ---------- p+ip coupling maps ----------

def pip_coupling(model: ModelSpec) -> float:
    """G of H_pip = Σ η n - G Σ_{i≠j} √(η_iη_j) S⁺_i S⁻_j, from G⁻¹ = L/2 - N - g⁻¹."""
    inv = model.L / 2.0 - model.N - 1.0 / model.g
    return 1.0 / inv


def g_from_pip(G: float, L: int, N: int) -> float:
    return 1.0 / (L / 2.0 - N - 1.0 / G)


def symmetric_pip_coupling(model: ModelSpec) -> float:
    """G_sym with G_sym⁻¹ = g⁻¹ - 1 + N - Σd (equals -1/(G⁻¹ + 1))."""
    inv = 1.0 / model.g - 1.0 + model.N - float(sum(model.d))
    return 1.0 / inv


def readgreen_inverse_coupling(L: int, N: int, p: int = 1) -> float:
    """G⁻¹ at which p zero-energy pairs can be added to an N-pair state."""
    return float(L - 2 * N - p)


def pip_model(etas, G: float, N: int) -> ModelSpec:
    return ModelSpec(kernel="hyperbolic", levels=list(etas), g=g_from_pip(G, len(etas), N), N=N)


def bath_model(etas, G: float, gamma: float, N: int = 0) -> ModelSpec:
    L = len(etas)
    g = g_from_pip(G, L, N) if abs(L / 2.0 - N - 1.0 / G) > 1e-14 else 1e300
    return ModelSpec(kernel="hyperbolic", levels=list(etas), g=g, N=N,
                     extension=BathExtension(gamma=gamma, G=G))


# ---------- continuation parameter ----------

def coupling_parameter(model: ModelSpec) -> float:
    """The scalar swept from its weak-coupling end: g, G or 1/κ."""
    ext = model.extension
    if ext.kind in ("dicke", "bath"):
        return float(ext.G)
    if ext.kind == "ext_pip":
        return 1.0 / ext.kappa
    return float(model.g)


def with_coupling(model: ModelSpec, value: float) -> ModelSpec:
    ext = model.extension
    if ext.kind == "dicke":
        return model.model_copy(update={"extension": ext.model_copy(update={"G": float(value)})})
    if ext.kind == "bath":
        new_ext = ext.model_copy(update={"G": float(value)})
        inv = model.L / 2.0 - model.N - 1.0 / value
        g = 1.0 / inv if abs(inv) > 1e-14 else 1e300
        return model.model_copy(update={"extension": new_ext, "g": g})
    if ext.kind == "ext_pip":
        return model.model_copy(update={"extension": ext.model_copy(update={"kappa": 1.0 / float(value)})})
    return model.with_g(value)
