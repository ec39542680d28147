# rgbethe/apps/floquet.py
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import schur

from rgbethe.config import ED_DIM_CAP, SUM_RULE_THRESHOLD
from rgbethe.ed import SectorBasis, build_hamiltonian, diagonalize, sector_basis, sz_operator
from rgbethe.equations import energy_from_lambda
from rgbethe.errors import ConfigError, NumericalError, SumRuleDeficitError
from rgbethe.overlaps import formfactor_sz, overlap_detJ
from rgbethe.schema import CentralSpinExtension, ModelSpec
from rgbethe.solver import patterns_for, solve_all, solve_at
from rgbethe.states import EvbVariables, OccupationPattern

logger = logging.getLogger(__name__)

EDGE_TOL = 1e-9
PATTERN_SEARCH_LIMIT = 2000


# ----------------------------
# Job
# ----------------------------
class FloquetJob(BaseModel):
    """
    Two-step drive of a central spin (index 0) coupled to a bath:
      H_k = B_k S^z_0 + Σ_j A_j S_0 · S_j,   U_F = e^{-i(1-η) H_2 T} e^{-i η H_1 T}
    Default couplings A_j = exp(-(j-1)/L) for j = 1..L bath spins.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    bath_size: int = Field(default=5, ge=1)
    couplings: Optional[List[float]] = None
    N: Optional[int] = None
    B1: float = 1.2
    B2: float = 0.8
    eta: float = 0.5
    basis: Literal["full_ed", "restricted"] = "full_ed"
    patterns: Optional[List[List[int]]] = None
    families: Literal["single_flip", "all"] = "single_flip"
    initial: Literal["ground", "top"] = "ground"
    sum_rule_threshold: float = Field(default=SUM_RULE_THRESHOLD, gt=0.0)

    @model_validator(mode="after")
    def _check(self) -> "FloquetJob":
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta={self.eta} must lie strictly between 0 and 1")
        if self.couplings is not None and len(self.couplings) != self.bath_size:
            raise ValueError(f"{len(self.couplings)} couplings for bath_size={self.bath_size}")
        if self.couplings is not None and any(a <= 0 for a in self.couplings):
            raise ValueError("couplings must be positive")
        if self.B1 <= 0 or self.B2 <= 0:
            raise ValueError("fields must be positive")
        if self.patterns is not None:
            if len(self.patterns) < 2:
                raise ValueError("a restricted basis needs at least two patterns")
            if any(len(p) != self.bath_size + 1 for p in self.patterns):
                raise ValueError(f"patterns must have {self.bath_size + 1} entries (central spin first)")
        n = self.pairs
        if not 0 <= n <= self.bath_size + 1:
            raise ValueError(f"N={n} outside [0, {self.bath_size + 1}]")
        return self

    @property
    def A(self) -> np.ndarray:
        L = self.bath_size
        if self.couplings is not None:
            return np.asarray(self.couplings, dtype=float)
        return np.exp(-np.arange(L) / L)

    @property
    def pairs(self) -> int:
        return (self.bath_size + 1) // 2 if self.N is None else int(self.N)

    @property
    def levels(self) -> List[float]:
        return [0.0] + list(-1.0 / self.A)

    @property
    def mean_field(self) -> float:
        return self.eta * self.B1 + (1.0 - self.eta) * self.B2

    def model(self, B: float) -> ModelSpec:
        """Central-spin Gaudin magnet with g = 1/B so that B·Q_0 is the Hamiltonian."""
        return ModelSpec(kernel="rational", levels=self.levels, g=1.0 / B, N=self.pairs,
                         extension=CentralSpinExtension(index=0, B_z=B))


def _fold(theta: np.ndarray) -> np.ndarray:
    """Map to (-π, π]."""
    out = np.mod(np.asarray(theta) + np.pi, 2.0 * np.pi) - np.pi
    out[out <= -np.pi] += 2.0 * np.pi
    return out


def _circular_gap(a: float, b: float) -> float:
    d = abs(float(_fold(np.array([a - b]))[0]))
    return min(d, 2.0 * np.pi - d)


# ----------------------------
# Full ED
# ----------------------------
@dataclass
class FloquetSystem:
    """Eigendecompositions of both step Hamiltonians and the averaged one."""
    job: FloquetJob
    basis: SectorBasis
    E1: np.ndarray
    V1: np.ndarray
    E2: np.ndarray
    V2: np.ndarray
    H_avg: np.ndarray
    E_avg: np.ndarray
    V_avg: np.ndarray

    @classmethod
    def build(cls, job: FloquetJob, cap: int = ED_DIM_CAP) -> "FloquetSystem":
        m1 = job.model(job.B1)
        basis = sector_basis(m1, kind="fixed_N", cap=cap)
        H1 = build_hamiltonian(m1, basis)
        H2 = build_hamiltonian(job.model(job.B2), basis)
        E1, V1 = diagonalize(H1)
        E2, V2 = diagonalize(H2)
        H_avg = job.eta * H1.matrix + (1.0 - job.eta) * H2.matrix
        E_avg, V_avg = np.linalg.eigh(H_avg)
        return cls(job, basis, E1, V1, E2, V2, H_avg, E_avg, V_avg)

    @property
    def bandwidth(self) -> float:
        return float(self.E_avg[-1] - self.E_avg[0])

    @property
    def critical_period(self) -> float:
        """T_c = 2π/W with W the bandwidth of the averaged Hamiltonian."""
        return 2.0 * np.pi / self.bandwidth

    def apply(self, T: float, psi: np.ndarray) -> np.ndarray:
        eta = self.job.eta
        x = self.V1.T @ psi
        x = self.V1 @ (np.exp(-1j * eta * self.E1 * T) * x)
        y = self.V2.T @ x
        return self.V2 @ (np.exp(-1j * (1.0 - eta) * self.E2 * T) * y)

    def operator(self, T: float) -> np.ndarray:
        eta = self.job.eta
        U1 = (self.V1 * np.exp(-1j * eta * self.E1 * T)[None, :]) @ self.V1.T
        U2 = (self.V2 * np.exp(-1j * (1.0 - eta) * self.E2 * T)[None, :]) @ self.V2.T
        return U2 @ U1

    def eigenphases(self, T: float) -> Tuple[np.ndarray, np.ndarray]:
        """θ_n in (-π, π] with U_F|φ_n⟩ = e^{-iθ_n}|φ_n⟩, and the φ_n as columns."""
        Tm, Z = schur(self.operator(T), output="complex")
        theta = _fold(-np.angle(np.diag(Tm)))
        order = np.argsort(theta, kind="stable")
        return theta[order], Z[:, order]

    def phase_derivatives(self, vectors: np.ndarray) -> np.ndarray:
        """∂θ_n/∂T = ⟨φ_n|H_avg|φ_n⟩."""
        return np.real(np.einsum("in,ij,jn->n", vectors.conj(), self.H_avg, vectors))


@dataclass
class FloquetSpectrum:
    periods: List[float] = field(default_factory=list)
    phases: List[np.ndarray] = field(default_factory=list)
    derivatives: List[np.ndarray] = field(default_factory=list)
    edge_flags: List[np.ndarray] = field(default_factory=list)

    def rows(self) -> List[List[float]]:
        out = []
        for T, th, d, fl in zip(self.periods, self.phases, self.derivatives, self.edge_flags):
            for n in range(len(th)):
                out.append([T, n, th[n], th[n] / T, d[n], float(fl[n])])
        return out

    @staticmethod
    def header() -> List[str]:
        return ["T", "n", "theta", "quasi_energy", "dtheta_dT", "edge"]


def floquet_full_ed(job: FloquetJob, periods: Sequence[float], cap: int = ED_DIM_CAP) -> FloquetSpectrum:
    """Eigenphases θ_n(T), quasi-energies θ_n/T and ∂θ_n/∂T over a period grid."""
    sys = FloquetSystem.build(job, cap)
    spec = FloquetSpectrum()
    for T in periods:
        if T <= 0:
            raise ConfigError(f"driving period must be positive, got {T}")
        theta, Z = sys.eigenphases(T)
        edge = np.abs(np.abs(theta) - np.pi) < EDGE_TOL
        if edge.any():
            logger.warning("eigenphase on the zone edge at T=%.12g; unwinding is ambiguous", T)
        spec.periods.append(float(T))
        spec.phases.append(theta)
        spec.derivatives.append(sys.phase_derivatives(Z))
        spec.edge_flags.append(edge)
    return spec


def phase_derivatives_fd(job: FloquetJob, T: float, h: float = 1e-5) -> Tuple[np.ndarray, np.ndarray]:
    """
    (Hellmann-Feynman, central finite difference) derivatives at T. Eigenvectors at
    T ± h are matched to those at T by overlap.
    """
    sys = FloquetSystem.build(job)
    theta, Z = sys.eigenphases(T)
    hf = sys.phase_derivatives(Z)
    fd = np.zeros(len(theta))
    tp, Zp = sys.eigenphases(T + h)
    tm, Zm = sys.eigenphases(T - h)
    for n in range(len(theta)):
        ip = int(np.argmax(np.abs(Zp.conj().T @ Z[:, n])))
        im = int(np.argmax(np.abs(Zm.conj().T @ Z[:, n])))
        fd[n] = float(_fold(np.array([tp[ip] - tm[im]]))[0]) / (2.0 * h)
    return hf, fd


# ----------------------------
# Resonant pair
# ----------------------------
def _central_weights(a: np.ndarray, b: np.ndarray, Z: np.ndarray) -> np.ndarray:
    return np.abs(a.conj() @ Z) ** 2 + np.abs(b.conj() @ Z) ** 2


@dataclass
class GapScan:
    periods: List[float] = field(default_factory=list)
    gaps: List[float] = field(default_factory=list)

    @property
    def minimum(self) -> Tuple[float, float]:
        i = int(np.argmin(self.gaps))
        return self.periods[i], self.gaps[i]

    def rows(self) -> List[List[float]]:
        return [[T, g] for T, g in zip(self.periods, self.gaps)]


def extremal_gap_scan(job: FloquetJob, periods: Sequence[float], cap: int = ED_DIM_CAP,
                      restricted: Optional["RestrictedFloquet"] = None) -> GapScan:
    """
    Eigenphase gap between the two Floquet states carrying most weight on the
    lowest and highest eigenstates of H_avg. A prebuilt restricted operator is reused.
    """
    scan = GapScan()
    if restricted is not None or job.basis == "restricted":
        R = restricted if restricted is not None else RestrictedFloquet.build(job)
        for T in periods:
            lam = np.linalg.eigvals(R.operator(T))
            theta = -np.angle(lam)
            scan.periods.append(float(T))
            scan.gaps.append(_circular_gap(theta[0], theta[1]) if len(theta) == 2
                             else _pair_gap(R, T))
        return scan
    sys = FloquetSystem.build(job, cap)
    lo, hi = sys.V_avg[:, 0], sys.V_avg[:, -1]
    for T in periods:
        theta, Z = sys.eigenphases(T)
        w = _central_weights(lo, hi, Z)
        a, b = np.argsort(w)[-2:]
        scan.periods.append(float(T))
        scan.gaps.append(_circular_gap(theta[a], theta[b]))
    return scan


# ----------------------------
# Restricted basis
# ----------------------------
def _moves(p: OccupationPattern) -> List[OccupationPattern]:
    occ = [i for i, c in enumerate(p.counts) if c]
    free = [i for i, c in enumerate(p.counts) if not c]
    out = []
    for i in occ:
        for j in free:
            c = list(p.counts)
            c[i], c[j] = 0, 1
            out.append(OccupationPattern(tuple(c)))
    return out


def family(patterns: Sequence[OccupationPattern]) -> List[OccupationPattern]:
    """Patterns plus all single spin-flip moves, N(L+1-N) per pattern, without repeats."""
    seen: Dict[Tuple[int, ...], OccupationPattern] = {}
    for p in patterns:
        for q in [p] + _moves(p):
            seen.setdefault(q.counts, q)
    return list(seen.values())


def resonant_patterns(job: FloquetJob) -> Tuple[OccupationPattern, OccupationPattern]:
    """
    Labels of the lowest and highest eigenstates of H_avg. Small systems solve every
    pattern and pick the extremal energies; larger ones take the weak-coupling guesses
    (central spin down with the strongest-coupled bath spins up, and its mirror).
    """
    model = job.model(job.mean_field)
    L, N = model.L, model.N
    if math.comb(L, N) <= PATTERN_SEARCH_LIMIT:
        sols = solve_all(model)
        energies = {p: energy_from_lambda(model, e) for p, e in sols.items()}
        lo = min(energies, key=energies.get)
        hi = max(energies, key=energies.get)
        return lo, hi
    ground = OccupationPattern.from_occupied(L, range(1, N + 1))
    top = OccupationPattern.from_occupied(L, [0] + list(range(1, N)))
    return ground, top


@dataclass
class OnShellSet:
    model: ModelSpec
    patterns: List[OccupationPattern]
    states: List[EvbVariables]
    energies: np.ndarray
    norms: np.ndarray

    @classmethod
    def solve(cls, model: ModelSpec, patterns: Sequence[OccupationPattern]) -> "OnShellSet":
        states = [solve_at(model, p) for p in patterns]
        energies = np.array([energy_from_lambda(model, s) for s in states])
        norms = np.array([overlap_detJ(model, s, s).real for s in states])
        if np.any(norms <= 0):
            raise NumericalError("non-positive Bethe state norm in restricted basis")
        return cls(model, list(patterns), states, energies, norms)


def _overlaps(left: OnShellSet, right: OnShellSet) -> np.ndarray:
    """Normalized ⟨l|r⟩ with each left state on-shell for its own field."""
    M = np.zeros((len(left.states), len(right.states)))
    for a, sa in enumerate(left.states):
        for b, sb in enumerate(right.states):
            M[a, b] = overlap_detJ(left.model, sa, sb).real
    return M / np.sqrt(np.outer(left.norms, right.norms))


@dataclass
class RestrictedFloquet:
    """
    U_ij = Σ_{m,n} ⟨φ_i|m⟩ e^{-i(1-η)E_m T} ⟨m|n⟩ e^{-iηE_n T} ⟨n|φ_j⟩
    with φ on-shell at the mean field, m at B_2 and n at B_1.
    """
    job: FloquetJob
    basis_states: OnShellSet
    step1: OnShellSet
    step2: OnShellSet
    A: np.ndarray       # ⟨m|φ_i⟩
    B: np.ndarray       # ⟨n|φ_j⟩
    C: np.ndarray       # ⟨m|n⟩
    deficits: Dict[str, List[float]]

    @classmethod
    def build(cls, job: FloquetJob, strict: bool = True) -> "RestrictedFloquet":
        if job.patterns is not None:
            pats = [OccupationPattern(tuple(int(x) for x in p)) for p in job.patterns]
        else:
            pats = list(resonant_patterns(job))
        m_avg, m1, m2 = job.model(job.mean_field), job.model(job.B1), job.model(job.B2)
        for p in pats:
            p.check(m_avg.capacities, m_avg.N)
        inter = family(pats) if job.families == "single_flip" else patterns_for(m_avg)
        phi = OnShellSet.solve(m_avg, pats)
        s1 = OnShellSet.solve(m1, inter)
        s2 = OnShellSet.solve(m2, inter)
        A = _overlaps(s2, phi)
        B = _overlaps(s1, phi)
        C = _overlaps(s2, s1)
        deficits = {
            "step2_basis": list(1.0 - (A ** 2).sum(axis=0)),
            "step1_basis": list(1.0 - (B ** 2).sum(axis=0)),
            "step2_step1": list(1.0 - (C ** 2).sum(axis=0)),
        }
        worst = max(max(abs(x) for x in v) for v in deficits.values())
        logger.debug("restricted Floquet: %d basis, %d intermediate, worst deficit %.3e",
                     len(pats), len(inter), worst)
        if strict and worst > job.sum_rule_threshold:
            raise SumRuleDeficitError(worst, job.sum_rule_threshold)
        return cls(job, phi, s1, s2, A, B, C, deficits)

    @property
    def size(self) -> int:
        return len(self.basis_states.states)

    def operator(self, T: float) -> np.ndarray:
        eta = self.job.eta
        p2 = np.exp(-1j * (1.0 - eta) * self.step2.energies * T)
        p1 = np.exp(-1j * eta * self.step1.energies * T)
        return self.A.T @ ((p2[:, None] * self.C) * p1[None, :]) @ self.B

    def unitarity_defect(self, T: float) -> float:
        U = self.operator(T)
        return float(np.linalg.norm(U.conj().T @ U - np.eye(self.size), ord=2))

    def sz_matrix(self, k: int = 0) -> np.ndarray:
        """Normalized ⟨φ_i|S^z_k|φ_j⟩ from the eigenvalue-based form factors."""
        st = self.basis_states
        S = np.zeros((self.size, self.size))
        for i in range(self.size):
            for j in range(self.size):
                S[i, j] = formfactor_sz(st.model, st.states[i], st.states[j], k, backend="evb").real
        return S / np.sqrt(np.outer(st.norms, st.norms))


def _pair_gap(R: RestrictedFloquet, T: float) -> float:
    lam, W = np.linalg.eig(R.operator(T))
    theta = -np.angle(lam)
    weight = np.abs(W[0]) ** 2 + np.abs(W[1]) ** 2
    a, b = np.argsort(weight)[-2:]
    return _circular_gap(theta[a], theta[b])


def floquet_restricted(job: FloquetJob, T: float, strict: bool = True) -> dict:
    """Restricted U_F at one period with its unitarity defect and sum-rule deficits."""
    R = RestrictedFloquet.build(job, strict=strict)
    U = R.operator(T)
    return {
        "T": float(T),
        "patterns": [p.label() for p in R.basis_states.patterns],
        "U": U,
        "unitarity_defect": R.unitarity_defect(T),
        "deficits": R.deficits,
        "energies": list(R.basis_states.energies),
    }


# ----------------------------
# Sweeps
# ----------------------------
@dataclass
class SweepRecord:
    periods: List[float] = field(default_factory=list)
    h_avg: List[float] = field(default_factory=list)
    sz0: List[float] = field(default_factory=list)

    def rows(self) -> List[List[float]]:
        return [[T, h, s] for T, h, s in zip(self.periods, self.h_avg, self.sz0)]


def floquet_sweep(job: FloquetJob, T_start: float, T_stop: float, dT: float,
                  cap: int = ED_DIM_CAP, strict: bool = True) -> SweepRecord:
    """
    Stroboscopic evolution: apply U_F(T_k) once, then T_{k+1} = T_k + dT. Records
    ⟨H_avg⟩ and ⟨S^z_0⟩ after every period.
    """
    if dT == 0 or (T_stop - T_start) * dT < 0:
        raise ConfigError(f"dT={dT} does not move from {T_start} towards {T_stop}")
    n_steps = int(math.floor((T_stop - T_start) / dT + 1e-9)) + 1
    periods = T_start + dT * np.arange(n_steps)
    rec = SweepRecord()

    if job.basis == "full_ed":
        sys = FloquetSystem.build(job, cap)
        psi = (sys.V_avg[:, 0] if job.initial == "ground" else sys.V_avg[:, -1]).astype(complex)
        sz = sz_operator(sys.basis, 0).matrix
        for T in periods:
            psi = sys.apply(T, psi)
            norm = float(np.real(np.vdot(psi, psi)))
            rec.periods.append(float(T))
            rec.h_avg.append(float(np.real(np.vdot(psi, sys.H_avg @ psi))) / norm)
            rec.sz0.append(float(np.real(np.vdot(psi, sz @ psi))) / norm)
        return rec

    R = RestrictedFloquet.build(job, strict=strict)
    E = R.basis_states.energies
    S = R.sz_matrix(0)
    start = int(np.argmin(E)) if job.initial == "ground" else int(np.argmax(E))
    c = np.zeros(R.size, dtype=complex)
    c[start] = 1.0
    for T in periods:
        c = R.operator(T) @ c
        norm = float(np.real(np.vdot(c, c)))
        rec.periods.append(float(T))
        rec.h_avg.append(float(np.sum(np.abs(c) ** 2 * E)) / norm)
        rec.sz0.append(float(np.real(np.vdot(c, S @ c))) / norm)
    return rec
