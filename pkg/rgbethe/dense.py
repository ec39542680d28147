# rgbethe/dense.py
from __future__ import annotations

import logging
from typing import Optional, Tuple

import numpy as np

from rgbethe.config import DENSE_DIM_CAP
from rgbethe.ed import SectorBasis, sector_basis
from rgbethe.errors import UnsupportedVariantError
from rgbethe.schema import ModelSpec
from rgbethe.states import BetheRoots

logger = logging.getLogger(__name__)

# ----------------------------
# Generalized raising operators
#
#   rational Gaudin:   S⁺(v) = Σ_i S⁺_i / (ε_i - v)
#   hyperbolic:        S⁺(v) = Σ_i √η_i S⁺_i / (η_i - v)      (v = 0 gives 1/√η_i)
#   dicke:             b† - G Σ_i S⁺_i / (ε_i - v)
#   ext-p+ip:          b† - (1/η₀) Σ_i √ε_i v S⁺_i / (ε_i - v)
# ----------------------------


def _level_coefficients(model: ModelSpec, v: complex) -> Tuple[np.ndarray, complex]:
    e = model.eps.astype(complex)
    kind = model.extension.kind
    if kind == "dicke":
        return -model.extension.G / (e - v), 1.0
    if kind == "ext_pip":
        return -np.sqrt(e) * v / ((e - v) * model.extension.eta0), 1.0
    if kind == "bath":
        raise UnsupportedVariantError("bath eigenstates carry no rapidity representation")
    if model.kernel == "hyperbolic":
        return np.sqrt(e) / (e - v), 0.0
    if model.kernel == "rational":
        return 1.0 / (e - v), 0.0
    raise UnsupportedVariantError(f"no dense Bethe vector for kernel={model.kernel}")


def _step_basis(model: ModelSpec, n: int, cap: int) -> SectorBasis:
    if model.extension.kind in ("dicke", "ext_pip"):
        return sector_basis(model, kind="bosonic_fixed_total", N=n, cap=cap)
    return sector_basis(model, kind="fixed_N", N=n, cap=cap)


def apply_raising(src: SectorBasis, dst: SectorBasis, vec: np.ndarray,
                  level_coef: np.ndarray, boson_coef: complex = 0.0, lower: bool = False) -> np.ndarray:
    """dst-vector of (Σ_i c_i S^±_i + c_b b†) acting on a src-vector."""
    out = np.zeros(dst.dim, dtype=complex)
    counts = src.counts
    caps = np.asarray(src.capacities)
    step = -1 if lower else 1
    for i in range(src.L):
        if level_coef[i] == 0:
            continue
        n = counts[:, i].astype(float)
        if lower:
            amp = np.sqrt(np.clip(n * (caps[i] - n + 1.0), 0.0, None))
        else:
            amp = np.sqrt(np.clip((n + 1.0) * (caps[i] - n), 0.0, None))
        tgt = counts.copy()
        tgt[:, i] += step
        idx = dst.index_of(tgt)
        ok = (idx >= 0) & (amp > 0)
        np.add.at(out, idx[ok], level_coef[i] * amp[ok] * vec[ok])
    if boson_coef != 0 and src.bosonic:
        nb = src.boson_counts.astype(float)
        tgt = counts.copy()
        tgt[:, src.L] += 1
        idx = dst.index_of(tgt)
        ok = idx >= 0
        np.add.at(out, idx[ok], boson_coef * np.sqrt(nb[ok] + 1.0) * vec[ok])
    return out


def bethe_vector_dense(model: ModelSpec, roots, dual: bool = False,
                       cap: int = DENSE_DIM_CAP) -> Tuple[np.ndarray, SectorBasis]:
    """
    Unnormalized ∏_a B(v_a)|vac⟩ in the enumerated sector basis.

    With dual=True the lowering operators Σ_i S⁻_i/(ε_i - v) act on the fully
    polarized state instead; the result lives in the sector with L·2s - len(roots)
    excitations.
    """
    v = np.asarray(roots.roots if isinstance(roots, BetheRoots) else roots, dtype=complex).reshape(-1)
    kind = model.extension.kind
    if dual:
        if kind != "none" or model.kernel != "rational":
            raise UnsupportedVariantError("dual vectors are built for rational Gaudin models")
        total = int(np.sum(model.capacities))
        basis = sector_basis(model, kind="fixed_N", N=total, cap=cap)
        vec = np.ones(1, dtype=complex)
        for a, va in enumerate(v):
            dst = sector_basis(model, kind="fixed_N", N=total - a - 1, cap=cap)
            coef, _ = _level_coefficients(model, va)
            vec = apply_raising(basis, dst, vec, coef, lower=True)
            basis = dst
        return vec, basis

    basis = _step_basis(model, 0, cap)
    vec = np.ones(1, dtype=complex)
    for a, va in enumerate(v):
        dst = _step_basis(model, a + 1, cap)
        coef, cb = _level_coefficients(model, va)
        vec = apply_raising(basis, dst, vec, coef, cb)
        basis = dst
    logger.debug("dense Bethe vector: N=%d dim=%d", len(v), basis.dim)
    return vec, basis


def overlap_dense(model: ModelSpec, roots_v, roots_w, cap: int = DENSE_DIM_CAP) -> complex:
    """Bilinear ⟨v|w⟩ = Σ ψ_v ψ_w (no conjugation), the convention of the determinant formulas."""
    a, _ = bethe_vector_dense(model, roots_v, cap=cap)
    b, _ = bethe_vector_dense(model, roots_w, cap=cap)
    return complex(np.dot(a, b))


def real_vector(vec: np.ndarray, tol: float = 1e-8) -> Optional[np.ndarray]:
    """Real part when the imaginary part is negligible, else None."""
    scale = float(np.max(np.abs(vec))) if len(vec) else 0.0
    if scale == 0.0 or float(np.max(np.abs(vec.imag))) <= tol * scale:
        return vec.real.copy()
    return None
