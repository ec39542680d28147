# rgbethe/apps/variational.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import minimize, minimize_scalar

from rgbethe.config import DENSE_DIM_CAP
from rgbethe.ed import (
    DenseOperator,
    SectorBasis,
    build_charge,
    build_hamiltonian,
    diagonalize,
    pairing_operator,
    sector_basis,
    spin_dot_operator,
    sz_operator,
)
from rgbethe.errors import (
    ConfigError,
    CrossingDivergenceError,
    NumericalError,
    UnsupportedVariantError,
)
from rgbethe.overlaps import product_state_vector
from rgbethe.rapidities import roots_from_lambda
from rgbethe.schema import ModelSpec
from rgbethe.solver import newton_refine, solve_at, track_levels
from rgbethe.states import BetheRoots, EvbVariables, OccupationPattern

logger = logging.getLogger(__name__)

GRADIENT_STEP = 1e-6        # times level spread
DIVERGENCE_FACTOR = 1e3     # |v| above factor * (spread + max|ε|) counts as runaway
SELECTOR_MIX = 1e-3


# ----------------------------
# Target Hamiltonian
# ----------------------------
class Perturbation(BaseModel):
    """
    One integrability-breaking term:
      sz:        μ S^z_i
      spin_dot:  μ S_i · S_j
      pairing:   μ Σ_ij M_ij S⁺_i S⁻_j
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["sz", "spin_dot", "pairing"]
    sites: List[int] = Field(default_factory=list)
    strength: float = 0.0
    matrix: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def _shape(self) -> "Perturbation":
        need = {"sz": 1, "spin_dot": 2, "pairing": 0}[self.kind]
        if len(self.sites) != need:
            raise ValueError(f"{self.kind} perturbation takes {need} site(s), got {self.sites}")
        if self.kind == "pairing" and self.matrix is None:
            raise ValueError("pairing perturbation needs a matrix")
        return self

    def operator(self, basis: SectorBasis) -> DenseOperator:
        if any(not 0 <= s < basis.L for s in self.sites):
            raise ConfigError(f"perturbation sites {self.sites} out of range for L={basis.L}")
        if self.kind == "sz":
            op = sz_operator(basis, self.sites[0])
        elif self.kind == "spin_dot":
            op = spin_dot_operator(basis, self.sites[0], self.sites[1])
        else:
            M = np.asarray(self.matrix, dtype=float)
            if M.shape != (basis.L, basis.L):
                raise ConfigError(f"pairing matrix has shape {M.shape}, expected ({basis.L}, {basis.L})")
            op = pairing_operator(basis, np.zeros(basis.L), M)
        return op.scaled(self.strength)


def target_hamiltonian(model: ModelSpec, perturbations: Sequence[Perturbation],
                       basis: Optional[SectorBasis] = None) -> DenseOperator:
    basis = basis if basis is not None else sector_basis(model, kind="fixed_N", cap=DENSE_DIM_CAP)
    H = build_hamiltonian(model, basis, cap=DENSE_DIM_CAP)
    for p in perturbations:
        H = H + p.operator(basis)
    return H


# ----------------------------
# Seeds
# ----------------------------
def select_eigenstate(model: ModelSpec, k: int = 0, seed: int = 0) -> EvbVariables:
    """
    On-shell variables of the k-th eigenstate (ascending energy) of the integrable
    Hamiltonian, read off the charges: Λ_i = -2⟨Q_i⟩/g with the shifted spin-1/2 charges.
    A small random charge combination splits degenerate eigenvalues.
    """
    if not model.spin_half or model.kernel != "rational":
        raise UnsupportedVariantError("eigenstate selection is implemented for rational spin-1/2 models")
    basis = sector_basis(model, kind="fixed_N")
    if not 0 <= k < basis.dim:
        raise ConfigError(f"eigenstate index {k} outside [0, {basis.dim})")
    H = build_hamiltonian(model, basis)
    charges = [build_charge(model, i, basis, shifted=True) for i in range(model.L)]
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1.0, 1.0, model.L)
    scale = max(1.0, float(np.max(np.abs(H.matrix))))
    mixed = H.matrix + SELECTOR_MIX * scale * sum(ci * Q.matrix for ci, Q in zip(c, charges))
    _, V = diagonalize(DenseOperator(mixed, basis, "selector"))
    energies = np.array([float(V[:, n] @ (H.matrix @ V[:, n])) for n in range(basis.dim)])
    n = int(np.argsort(energies, kind="stable")[k])
    vec = V[:, n]
    q = np.array([float(vec @ (Q.matrix @ vec)) for Q in charges])
    guess = EvbVariables(-2.0 * q / model.g, model.g)
    logger.debug("selected eigenstate %d with energy %.12g", k, energies[n])
    return newton_refine(model, guess)


def seed_state(model: ModelSpec, seed: Optional[OccupationPattern] = None, eigenstate: Optional[int] = None) -> EvbVariables:
    if seed is not None and eigenstate is not None:
        raise ConfigError("give either a pattern seed or an eigenstate index, not both")
    if eigenstate is not None:
        return select_eigenstate(model, eigenstate)
    if seed is None:
        return select_eigenstate(model, 0)
    return solve_at(model, seed.check(model.capacities, model.N))


# ----------------------------
# Energy functional
# ----------------------------
def _energy(H: DenseOperator, vec: np.ndarray) -> float:
    v = np.real(vec)
    return float(v @ (H.matrix @ v)) / float(v @ v)


def overlap_with(vec: np.ndarray, ref: np.ndarray) -> float:
    a = np.real(vec)
    b = np.real(ref)
    return float(abs(a @ b) / np.sqrt((a @ a) * (b @ b)))


class _OnShell:
    """Keeps the last accepted (levels, Λ) so every trial point is a short level homotopy."""

    def __init__(self, model: ModelSpec, evb: EvbVariables):
        self.model = model
        self.evb = evb

    def at(self, levels) -> Tuple[ModelSpec, EvbVariables]:
        levels = np.asarray(levels, dtype=float)
        if np.array_equal(levels, self.model.eps):
            return self.model, self.evb
        return track_levels(self.model, self.evb, levels)

    def accept(self, model: ModelSpec, evb: EvbVariables) -> None:
        self.model = model
        self.evb = evb


@dataclass
class VariationalResult:
    mode: str
    seed: str
    levels: List[float]
    g: float
    energy: float
    energy_pt1: float
    lambdas: List[float]
    roots: Optional[BetheRoots] = None
    energy_exact: Optional[float] = None
    overlap_pt0: Optional[float] = None
    overlap_var: Optional[float] = None
    trace: List[float] = field(default_factory=list)
    converged: bool = True
    message: str = ""

    def summary(self) -> dict:
        out = {
            "mode": self.mode, "seed": self.seed, "g": self.g,
            "energy": self.energy, "energy_pt1": self.energy_pt1,
            "energy_exact": self.energy_exact, "overlap_pt0": self.overlap_pt0,
            "overlap_var": self.overlap_var, "converged": self.converged,
            "iterations": len(self.trace), "message": self.message,
            "levels": list(self.levels),
        }
        if self.roots is not None:
            out["roots_re"] = [float(x.real) for x in self.roots.roots]
            out["roots_im"] = [float(x.imag) for x in self.roots.roots]
        return out


def _check_divergence(model: ModelSpec, evb: EvbVariables) -> Optional[BetheRoots]:
    if model.N == 0:
        return BetheRoots(np.zeros(0, dtype=complex))
    try:
        roots = roots_from_lambda(model, evb, polish=False)
    except NumericalError as exc:
        logger.debug("root reconstruction failed during optimization: %s", exc)
        return None
    bound = DIVERGENCE_FACTOR * (model.level_spread + float(np.max(np.abs(model.eps))))
    big = float(np.max(np.abs(roots.roots)))
    if big > bound:
        raise CrossingDivergenceError(
            f"rapidity modulus {big:.3e} exceeds {bound:.3e}; the seeded state crosses another "
            "eigenstate, restart from an excited-state seed"
        )
    return roots


def variational_optimize(model: ModelSpec, perturbations: Sequence[Perturbation],
                         seed: Optional[OccupationPattern] = None, eigenstate: Optional[int] = None,
                         mode: Literal["full_eps", "line_search_g"] = "full_eps",
                         g_bounds: Optional[Tuple[float, float]] = None,
                         max_iter: int = 200, with_exact: bool = True) -> VariationalResult:
    """
    Minimize ⟨ψ|H|ψ⟩/⟨ψ|ψ⟩ over on-shell Bethe states of the integrable model.

    full_eps:       quasi-Newton over the levels ε at fixed g, gradients by central
                    differences with an on-shell re-solve per trial point
    line_search_g:  bounded scalar search over g at fixed ε
    The starting point is first-order perturbation theory, so energy ≤ energy_pt1.
    """
    if model.kernel != "rational" or not model.spin_half:
        raise UnsupportedVariantError("variational optimization uses rational spin-1/2 Bethe states")
    if model.extension.kind not in ("none", "central_spin"):
        raise UnsupportedVariantError(f"no variational manifold for extension {model.extension.kind}")
    basis = sector_basis(model, kind="fixed_N", cap=DENSE_DIM_CAP)
    H = target_hamiltonian(model, perturbations, basis)
    start = seed_state(model, seed, eigenstate)
    seed_label = seed.label() if seed is not None else f"eigenstate:{eigenstate or 0}"

    vec0 = product_state_vector(model, start, basis)
    e_pt1 = _energy(H, vec0)
    trace: List[float] = [e_pt1]
    best = {"x": model.eps.copy(), "g": model.g, "E": e_pt1, "model": model, "evb": start}

    if mode == "line_search_g":
        lo, hi = g_bounds if g_bounds is not None else sorted((0.5 * model.g, 1.5 * model.g))
        pattern = seed

        def f_g(g: float) -> float:
            m = model.with_g(g)
            try:
                evb = solve_at(m, pattern) if pattern is not None else select_eigenstate(m, eigenstate or 0)
            except NumericalError as exc:
                logger.debug("line search point g=%.6g failed: %s", g, exc)
                return float("inf")
            E = _energy(H, product_state_vector(m, evb, basis))
            trace.append(E)
            if E < best["E"]:
                best.update(x=m.eps.copy(), g=g, E=E, model=m, evb=evb)
            return E

        res = minimize_scalar(f_g, bounds=(lo, hi), method="bounded", options={"maxiter": max_iter})
        converged, message = bool(res.success), str(res.message)
    else:
        track = _OnShell(model, start)
        h = GRADIENT_STEP * model.level_spread
        penalty = abs(e_pt1) * 10.0 + 1e3

        def f(x: np.ndarray) -> float:
            try:
                m, evb = track.at(x)
            except (NumericalError, ValueError) as exc:
                logger.debug("trial point rejected: %s", exc)
                return penalty
            E = _energy(H, product_state_vector(m, evb, basis))
            if E < best["E"]:
                best.update(x=np.array(x, dtype=float), E=E, model=m, evb=evb)
            return E

        def grad(x: np.ndarray) -> np.ndarray:
            out = np.zeros(len(x))
            for i in range(len(x)):
                xp = np.array(x, dtype=float)
                xm = np.array(x, dtype=float)
                xp[i] += h
                xm[i] -= h
                out[i] = (f(xp) - f(xm)) / (2.0 * h)
            return out

        def accept(xk: np.ndarray) -> None:
            m, evb = track.at(xk)
            _check_divergence(m, evb)
            track.accept(m, evb)
            trace.append(_energy(H, product_state_vector(m, evb, basis)))

        res = minimize(f, model.eps.copy(), jac=grad, method="BFGS", callback=accept,
                       options={"maxiter": max_iter, "gtol": 1e-7 * max(1.0, abs(e_pt1))})
        converged, message = bool(res.success), str(res.message)

    m_best, evb_best = best["model"], best["evb"]
    roots = _check_divergence(m_best, evb_best)
    result = VariationalResult(
        mode=mode, seed=seed_label, levels=[float(x) for x in m_best.eps], g=float(m_best.g),
        energy=float(best["E"]), energy_pt1=e_pt1, lambdas=[float(x) for x in evb_best.lambdas],
        roots=roots, trace=trace, converged=converged, message=message,
    )
    if with_exact:
        w, V = diagonalize(H, n_lowest=1)
        gs = V[:, 0]
        result.energy_exact = float(w[0])
        result.overlap_pt0 = overlap_with(vec0, gs)
        result.overlap_var = overlap_with(product_state_vector(m_best, evb_best, basis), gs)
    logger.debug("variational %s: E_pt1=%.10g E_var=%.10g (%s)", mode, e_pt1, result.energy, message)
    return result
