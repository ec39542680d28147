# rgbethe/apps/rgci.py
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import minimize_scalar

from rgbethe.config import ED_DIM_CAP
from rgbethe.dense import bethe_vector_dense
from rgbethe.ed import (
    DenseOperator,
    SectorBasis,
    build_hamiltonian,
    diagonalize,
    pairing_operator,
    sector_basis,
)
from rgbethe.errors import ConfigError, NoConvergenceError
from rgbethe.equations import energy_from_lambda
from rgbethe.overlaps import pairing_matrix_element, product_state_vector
from rgbethe.rapidities import roots_from_lambda
from rgbethe.schema import ModelSpec
from rgbethe.solver import lowest_pattern, solve_all

logger = logging.getLogger(__name__)

FIXTURE_PACKAGE = "rgbethe.fixtures"


# ----------------------------
# Pairing tables
# ----------------------------
class PairingTable(BaseModel):
    """
    Single-particle levels with an optional two-body pairing matrix.
    omega_kind "states": omega is 2j+1 (pair capacity omega/2);
    omega_kind "pairs":  omega is the pair capacity itself.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: int = 1
    name: str
    description: str = ""
    units: str = "MeV"
    orbitals: List[str] = Field(default_factory=list)
    omega: List[int]
    omega_kind: Literal["states", "pairs"] = "states"
    levels: List[float]
    G: Optional[List[List[float]]] = None
    pairs: int = Field(default=0, ge=0)
    mass_offset: int = 0
    reference: Optional[Dict[str, float]] = None

    @model_validator(mode="after")
    def _shapes(self) -> "PairingTable":
        L = len(self.levels)
        if len(self.omega) != L:
            raise ValueError(f"omega has {len(self.omega)} entries for {L} levels")
        if self.orbitals and len(self.orbitals) != L:
            raise ValueError(f"{len(self.orbitals)} orbital labels for {L} levels")
        if self.omega_kind == "states" and any(w % 2 for w in self.omega):
            raise ValueError(f"state degeneracies must be even, got {self.omega}")
        if self.G is not None:
            G = np.asarray(self.G, dtype=float)
            if G.shape != (L, L):
                raise ValueError(f"G has shape {G.shape}, expected ({L}, {L})")
            if np.max(np.abs(G - G.T)) > 1e-12:
                raise ValueError("G must be symmetric")
        return self

    @property
    def L(self) -> int:
        return len(self.levels)

    @property
    def capacities(self) -> List[int]:
        return [w // 2 if self.omega_kind == "states" else w for w in self.omega]

    @property
    def degeneracies(self) -> List[float]:
        return [c / 2.0 for c in self.capacities]

    @property
    def G_matrix(self) -> np.ndarray:
        if self.G is None:
            raise ConfigError(f"pairing table {self.name} has no interaction matrix")
        return np.asarray(self.G, dtype=float)

    def model(self, g: float = 0.0, N: Optional[int] = None) -> ModelSpec:
        """The reduced BCS surrogate Σ ε_i n_i + g Σ S⁺_i S⁻_j on the same levels."""
        return ModelSpec(kernel="rational", levels=list(self.levels), degeneracies=self.degeneracies,
                         g=float(g), N=self.pairs if N is None else int(N))


def load_pairing_table(source: Union[str, Path]) -> PairingTable:
    """A bundled fixture name (`sn116`, `fe56`) or a path to a JSON table."""
    p = Path(source)
    if p.suffix == ".json" or p.exists():
        with open(p, "r", encoding="utf-8") as f:
            data = json.load(f)
    else:
        ref = resources.files(FIXTURE_PACKAGE).joinpath(f"{source}.json")
        if not ref.is_file():
            raise ConfigError(f"no bundled pairing table named {source!r}")
        data = json.loads(ref.read_text(encoding="utf-8"))
    return PairingTable.model_validate(data)


# ----------------------------
# Operators and reference energies
# ----------------------------
def _basis(table: PairingTable, N: int, capacities: Optional[Sequence[int]] = None,
           cap: int = ED_DIM_CAP) -> SectorBasis:
    return sector_basis(table.model(0.0, N), kind="fixed_N", capacities=capacities, N=N, cap=cap)


def pairing_hamiltonian(table: PairingTable, basis: SectorBasis) -> DenseOperator:
    return pairing_operator(basis, table.levels, table.G_matrix)


def fock_vector(table: PairingTable, basis: SectorBasis) -> np.ndarray:
    """Uncorrelated reference: levels filled in ascending energy."""
    pat = lowest_pattern(table.model(0.0, basis.N))
    idx = int(basis.index_of(np.asarray([pat.counts], dtype=np.int64))[0])
    vec = np.zeros(basis.dim)
    vec[idx] = 1.0
    return vec


def fock_energy(table: PairingTable, N: Optional[int] = None) -> float:
    basis = _basis(table, table.pairs if N is None else N)
    f = fock_vector(table, basis)
    return float(f @ (pairing_hamiltonian(table, basis).matrix @ f))


def integrable_basis(table: PairingTable, g: float, basis: SectorBasis) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of the reduced BCS surrogate at coupling g, ascending in energy."""
    H = build_hamiltonian(table.model(g, basis.N), basis)
    return diagonalize(H)


def energy_functional(table: PairingTable, g: float, N: Optional[int] = None, n: int = 0) -> float:
    """E_n[g] = ⟨ψ_n(g)|H|ψ_n(g)⟩ for the n-th surrogate eigenstate."""
    basis = _basis(table, table.pairs if N is None else N)
    _, V = integrable_basis(table, g, basis)
    v = V[:, n]
    return float(v @ (pairing_hamiltonian(table, basis).matrix @ v))


def optimal_coupling(table: PairingTable, N: Optional[int] = None,
                     bounds: Tuple[float, float] = (-1.0, 0.0), xatol: float = 1e-6) -> Tuple[float, float]:
    """Line search for the surrogate coupling minimizing E_0[g]."""
    N = table.pairs if N is None else N
    basis = _basis(table, N)
    H = pairing_hamiltonian(table, basis).matrix

    def E(g: float) -> float:
        _, V = integrable_basis(table, g, basis)
        v = V[:, 0]
        return float(v @ (H @ v))

    res = minimize_scalar(E, bounds=bounds, method="bounded", options={"xatol": xatol})
    if not res.success:
        raise NoConvergenceError(f"coupling line search failed: {res.message}", float("nan"))
    logger.debug("optimal coupling g0=%.6f E=%.6f after %d evaluations", res.x, res.fun, res.nfev)
    return float(res.x), float(res.fun)


# ----------------------------
# RG basis matrices
# ----------------------------
def rg_basis_matrix(H: DenseOperator, vectors: np.ndarray, shift: float = 0.0) -> np.ndarray:
    """
    ⟨m|H|n⟩ / √(⟨m|m⟩⟨n|n⟩) over the columns of `vectors` (bilinear, real states),
    with `shift` subtracted from the diagonal.
    """
    V = np.asarray(vectors)
    norms = np.sqrt(np.abs(np.einsum("ij,ij->j", V, V)))
    U = V / norms[None, :]
    M = U.T @ (H.matrix @ U)
    M = np.real_if_close(0.5 * (M + M.T))
    return M - shift * np.eye(M.shape[0])


def supports_bethe_basis(table: PairingTable, g: float) -> bool:
    """Eigenvalue-based solutions exist for spin-1/2 and spin-1 levels away from g = 0."""
    return g != 0.0 and max(table.degeneracies) <= 1.0


def bethe_states(table: PairingTable, g: float, N: int) -> Tuple[List, List[float]]:
    """Every on-shell surrogate state at coupling g, ascending in energy."""
    model = table.model(g, N)
    states = list(solve_all(model).values())
    energies = [energy_from_lambda(model, s) for s in states]
    order = np.argsort(energies, kind="stable")
    return [states[k] for k in order], [float(energies[k]) for k in order]


def bethe_basis_matrix(table: PairingTable, g: float, states: Sequence, basis: SectorBasis,
                       H: DenseOperator, shift: float = 0.0) -> np.ndarray:
    """
    Normalized ⟨m|H|n⟩ over on-shell surrogate states. Spin-1/2 tables use the
    determinant expansion of the pairing matrix elements; spin-1 levels build
    dense Bethe vectors.
    """
    model = table.model(g, basis.N)
    if not model.spin_half:
        return rg_basis_matrix(H, bethe_basis_vectors(model, states, basis), shift=shift)
    G = table.G_matrix
    n = len(states)
    M = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            val = pairing_matrix_element(model, G, states[i], states[j], backend="determinant").real
            M[i, j] = M[j, i] = val
    return M - shift * np.eye(n)


def bethe_basis_vectors(model: ModelSpec, states: Sequence, basis: SectorBasis) -> np.ndarray:
    """Columns of on-shell Bethe states: product-state determinants for spin-1/2, dense otherwise."""
    if model.spin_half:
        cols = [product_state_vector(model, s, basis) for s in states]
    else:
        cols = []
        for s in states:
            vec, b = bethe_vector_dense(model, roots_from_lambda(model, s))
            if b.dim != basis.dim:
                raise ConfigError(f"dense vector dimension {b.dim} differs from basis dimension {basis.dim}")
            cols.append(vec)
    return np.real_if_close(np.column_stack(cols))


def offdiagonal_mass(M: np.ndarray, block: Optional[int] = None) -> float:
    """Frobenius norm of the off-diagonal part of the leading block."""
    A = np.asarray(M)[:block, :block] if block else np.asarray(M)
    return float(np.linalg.norm(A - np.diag(np.diag(A))))


@dataclass
class RgciRun:
    g: float
    N: int
    fock_energy: float
    exact_energy: float
    integrable_energies: List[float] = field(default_factory=list)
    energies: List[float] = field(default_factory=list)     # lowest eigenvalue per basis size
    delta_c: List[float] = field(default_factory=list)
    matrix: Optional[np.ndarray] = None                      # diagonal shifted by the Fock energy
    basis: str = "integrable"

    @property
    def dim(self) -> int:
        return len(self.energies)

    @property
    def variational_energy(self) -> float:
        return self.energies[0]

    def basis_size_for(self, threshold: float) -> int:
        for n, d in enumerate(self.delta_c, start=1):
            if d <= threshold:
                return n
        return self.dim

    def rows(self) -> List[List[float]]:
        return [[n + 1, self.integrable_energies[n], self.energies[n], self.delta_c[n]] for n in range(self.dim)]

    def summary(self) -> dict:
        return {
            "g": self.g, "N": self.N, "dim": self.dim, "basis": self.basis,
            "fock_energy": self.fock_energy, "exact_energy": self.exact_energy,
            "variational_energy": self.variational_energy,
            "correlation_energy": self.exact_energy - self.fock_energy,
            "delta_c_1": self.delta_c[0], "n_for_1pct": self.basis_size_for(0.01),
        }


def rgci_run(table: PairingTable, g: Optional[float] = None, N: Optional[int] = None,
             bounds: Tuple[float, float] = (-1.0, 0.0), max_basis: Optional[int] = None,
             basis: Literal["auto", "bethe", "integrable"] = "auto") -> RgciRun:
    """
    Step 1 (g=None): line search for g0. Step 2: CI in the surrogate eigenbasis ordered
    by surrogate energy, recording the missing-correlation fraction
    δ_c(n) = 1 - (E(n) - E_Fock) / (E_exact - E_Fock).
    basis="bethe" builds the CI matrix from on-shell Bethe states, "integrable" from
    surrogate eigenvectors; "auto" takes Bethe states wherever they can be solved for.
    """
    N = table.pairs if N is None else N
    if g is None:
        g, _ = optimal_coupling(table, N, bounds)
    if basis == "auto":
        basis = "bethe" if supports_bethe_basis(table, g) else "integrable"
    if basis == "bethe" and not supports_bethe_basis(table, g):
        raise ConfigError(f"no Bethe basis for table {table.name} at g={g}: needs g != 0 and level spins <= 1")
    sector = _basis(table, N)
    H = pairing_hamiltonian(table, sector)
    e_fock = fock_energy(table, N)
    w_exact, _ = diagonalize(H, n_lowest=1)
    e_exact = float(w_exact[0])
    if basis == "bethe":
        states, w_int = bethe_states(table, g, N)
        if max_basis is not None:
            states, w_int = states[:max_basis], w_int[:max_basis]
        M = bethe_basis_matrix(table, g, states, sector, H, shift=e_fock)
    else:
        w_int, V = integrable_basis(table, g, sector)
        if max_basis is not None:
            V, w_int = V[:, :max_basis], w_int[:max_basis]
        M = rg_basis_matrix(H, V, shift=e_fock)
    ec_exact = e_exact - e_fock
    run = RgciRun(g=float(g), N=N, fock_energy=e_fock, exact_energy=e_exact,
                  integrable_energies=[float(x) for x in w_int], matrix=M, basis=basis)
    for n in range(1, M.shape[0] + 1):
        lowest = float(np.linalg.eigvalsh(M[:n, :n])[0]) + e_fock
        run.energies.append(lowest)
        run.delta_c.append(1.0 - (lowest - e_fock) / ec_exact if ec_exact != 0 else 0.0)
    logger.debug("rgci g=%.6f: δ_c(1)=%.4e, full=%.3e", g, run.delta_c[0], run.delta_c[-1])
    return run


# ----------------------------
# Odd-even staggering
# ----------------------------
def ground_energy(table: PairingTable, particles: int) -> float:
    """
    Lowest energy with `particles` valence fermions. Odd counts block one level:
    E(2N+1) = min_k [ε_k + E₀(N; capacity_k - 1)].
    """
    caps = table.capacities
    N, odd = divmod(int(particles), 2)
    if particles < 0 or N + odd > sum(caps):
        raise ConfigError(f"{particles} particles do not fit {2 * sum(caps)} states")

    def lowest(capacities: Sequence[int], n: int) -> float:
        if n > sum(capacities):
            return float("inf")
        basis = _basis(table, n, capacities)
        w, _ = diagonalize(pairing_hamiltonian(table, basis), n_lowest=1)
        return float(w[0])

    if not odd:
        return lowest(caps, N)
    best = float("inf")
    for k in range(table.L):
        if caps[k] == 0:
            continue
        blocked = list(caps)
        blocked[k] -= 1
        best = min(best, table.levels[k] + lowest(blocked, N))
    return best


def pairing_gaps(binding: Mapping[int, float], masses: Optional[Sequence[int]] = None) -> Dict[int, float]:
    """Δ⁽³⁾(A) = (-1)^A [BE(A) - 2BE(A-1) + BE(A-2)] for every A with both predecessors."""
    if masses is None:
        masses = [A for A in sorted(binding) if A - 1 in binding and A - 2 in binding]
    out: Dict[int, float] = {}
    for A in masses:
        missing = [x for x in (A, A - 1, A - 2) if x not in binding]
        if missing:
            raise ConfigError(f"three-point gap at A={A} needs binding energies for {missing}")
        out[A] = (-1.0) ** A * (binding[A] - 2.0 * binding[A - 1] + binding[A - 2])
    return out


def pairing_gap_curve(table: PairingTable, particles: Sequence[int]) -> Dict[int, float]:
    """Gaps keyed by mass number A = mass_offset + particles, from BE = -E."""
    counts = sorted(set(int(n) for n in particles) | set(int(n) - 1 for n in particles)
                    | set(int(n) - 2 for n in particles))
    binding = {table.mass_offset + n: -ground_energy(table, n) for n in counts if n >= 0}
    masses = [table.mass_offset + int(n) for n in particles]
    return pairing_gaps(binding, masses)
