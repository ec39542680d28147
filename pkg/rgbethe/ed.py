# rgbethe/ed.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import product
from typing import List, Literal, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.linalg import eigh
from scipy.sparse import coo_matrix

from rgbethe.config import ED_DIM_CAP
from rgbethe.errors import CapacityError, DimensionCapError, NonHermitianError, UnsupportedVariantError
from rgbethe.kernels import x_matrix, z_matrix
from rgbethe.schema import ModelSpec, pip_coupling
from rgbethe.states import compositions

logger = logging.getLogger(__name__)

SectorKind = Literal["fixed_N", "all_N_even_parity", "bosonic_fixed_total"]

HERMITIAN_TOL = 1e-12


# ----------------------------
# Sector bases
# ----------------------------
@dataclass(frozen=True)
class SectorBasis:
    """
    Rows of `counts` are basis labels: per-level pair counts, boson count last
    for bosonic sectors. Rows are sorted lexicographically.
    """
    kind: SectorKind
    capacities: Tuple[int, ...]
    counts: np.ndarray
    N: Optional[int] = None
    _radix: np.ndarray = field(init=False, repr=False, compare=False)
    _keys: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64).reshape(len(self.counts), -1)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        caps = list(self.capacities)
        if self.bosonic:
            caps.append(int(self.N))
        radix = np.cumprod([1] + [c + 1 for c in caps[::-1]])[:-1][::-1].astype(np.int64)
        object.__setattr__(self, "_radix", radix)
        object.__setattr__(self, "_keys", counts @ radix)

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def L(self) -> int:
        return len(self.capacities)

    @property
    def bosonic(self) -> bool:
        return self.kind == "bosonic_fixed_total"

    @property
    def spin_counts(self) -> np.ndarray:
        return self.counts[:, : self.L]

    @property
    def boson_counts(self) -> np.ndarray:
        if not self.bosonic:
            raise UnsupportedVariantError(f"{self.kind} sector has no boson mode")
        return self.counts[:, self.L]

    def labels(self) -> List[Tuple[int, ...]]:
        return [tuple(int(x) for x in row) for row in self.counts]

    def index_of(self, rows) -> np.ndarray:
        """Basis index per label row; -1 where the label is not in the sector."""
        rows = np.atleast_2d(np.asarray(rows, dtype=np.int64))
        if rows.shape[1] != self.counts.shape[1]:
            raise ValueError(f"label width {rows.shape[1]} != {self.counts.shape[1]}")
        caps = np.asarray(list(self.capacities) + ([self.N] if self.bosonic else []))
        ok = np.all((rows >= 0) & (rows <= caps[None, :]), axis=1)
        keys = rows @ self._radix
        pos = np.searchsorted(self._keys, keys)
        pos = np.clip(pos, 0, max(self.dim - 1, 0))
        hit = ok & (self._keys[pos] == keys) if self.dim else np.zeros(len(rows), dtype=bool)
        return np.where(hit, pos, -1)


def _count_fixed(caps: Sequence[int], N: int) -> int:
    ways = np.zeros(N + 1, dtype=object)
    ways[0] = 1
    for c in caps:
        nxt = np.zeros(N + 1, dtype=object)
        for n in range(N + 1):
            if ways[n]:
                for k in range(min(c, N - n) + 1):
                    nxt[n + k] += ways[n]
        ways = nxt
    return int(ways[N])


def sector_basis(model: ModelSpec, kind: Optional[SectorKind] = None,
                 capacities: Optional[Sequence[int]] = None, N: Optional[int] = None,
                 cap: int = ED_DIM_CAP) -> SectorBasis:
    """
    Default kind follows the model: bath → all_N_even_parity, Dicke and ext-p+ip →
    bosonic_fixed_total, otherwise fixed_N. Explicit capacities form blocked sectors.
    """
    ext = model.extension.kind
    if kind is None:
        kind = "all_N_even_parity" if ext == "bath" else (
            "bosonic_fixed_total" if ext in ("dicke", "ext_pip") else "fixed_N")
    caps = [int(c) for c in (capacities if capacities is not None else model.capacities)]
    if len(caps) != model.L:
        raise CapacityError(f"{len(caps)} capacities for L={model.L}")
    if any(c < 0 for c in caps):
        raise CapacityError(f"capacities must be non-negative, got {caps}")
    N = model.N if N is None else int(N)

    if kind == "fixed_N":
        if N > sum(caps):
            raise CapacityError(f"N={N} exceeds capacity {sum(caps)}")
        dim = _count_fixed(caps, N)
        if dim > cap:
            raise DimensionCapError(dim, cap)
        counts = np.array(list(compositions(caps, N)), dtype=np.int64).reshape(dim, len(caps))
        return SectorBasis(kind, tuple(caps), counts, N)

    if kind == "all_N_even_parity":
        dim = int(np.prod([c + 1 for c in caps], dtype=object))
        if dim > cap:
            raise DimensionCapError(dim, cap)
        counts = np.array(list(product(*[range(c + 1) for c in caps])), dtype=np.int64).reshape(dim, len(caps))
        return SectorBasis(kind, tuple(caps), counts, None)

    if kind == "bosonic_fixed_total":
        dim = sum(_count_fixed(caps, M) for M in range(0, min(N, sum(caps)) + 1))
        if dim > cap:
            raise DimensionCapError(dim, cap)
        rows = []
        for M in range(0, min(N, sum(caps)) + 1):
            rows.extend(c + (N - M,) for c in compositions(caps, M))
        counts = np.array(rows, dtype=np.int64).reshape(dim, len(caps) + 1)
        counts = counts[np.lexsort(counts.T[::-1])]
        return SectorBasis(kind, tuple(caps), counts, N)

    raise ValueError(f"unknown sector kind {kind!r}")


# ----------------------------
# Operators
# ----------------------------
@dataclass
class DenseOperator:
    matrix: np.ndarray
    basis: SectorBasis
    label: str = ""

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def hermiticity_defect(self) -> float:
        A = self.matrix
        return float(np.max(np.abs(A - A.conj().T))) if A.size else 0.0

    def __add__(self, other: "DenseOperator") -> "DenseOperator":
        return DenseOperator(self.matrix + other.matrix, self.basis, f"{self.label}+{other.label}")

    def scaled(self, c: float) -> "DenseOperator":
        return DenseOperator(c * self.matrix, self.basis, self.label)


class _Builder:
    """COO accumulator; duplicates add up on densify."""

    def __init__(self, basis: SectorBasis):
        self.basis = basis
        self.rows: List[np.ndarray] = []
        self.cols: List[np.ndarray] = []
        self.vals: List[np.ndarray] = []

    def diag(self, values, c: complex = 1.0) -> "_Builder":
        idx = np.arange(self.basis.dim)
        self.rows.append(idx)
        self.cols.append(idx)
        self.vals.append(c * np.asarray(values, dtype=complex))
        return self

    def move(self, delta, amp, c: complex = 1.0) -> "_Builder":
        """Add c·amp(src)|src + delta⟩⟨src| for every source whose target is in the sector."""
        b = self.basis
        amp = np.asarray(amp, dtype=complex)
        tgt = b.index_of(b.counts + np.asarray(delta, dtype=np.int64)[None, :])
        keep = (tgt >= 0) & (amp != 0)
        src = np.where(keep)[0]
        self.rows.append(tgt[keep])
        self.cols.append(src)
        self.vals.append(c * amp[keep])
        return self

    def dense(self) -> np.ndarray:
        n = self.basis.dim
        if not self.rows:
            return np.zeros((n, n))
        A = coo_matrix((np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
                       shape=(n, n)).toarray()
        if np.max(np.abs(A.imag), initial=0.0) == 0.0:
            A = A.real
        return A


def _spins(basis: SectorBasis) -> np.ndarray:
    return np.asarray(basis.capacities, dtype=float) / 2.0


def _raise_amp(basis: SectorBasis, i: int) -> np.ndarray:
    """⟨n+1|S⁺|n⟩ = √((n+1)(2s-n))."""
    n = basis.spin_counts[:, i].astype(float)
    return np.sqrt(np.clip((n + 1.0) * (basis.capacities[i] - n), 0.0, None))


def _lower_amp(basis: SectorBasis, i: int) -> np.ndarray:
    n = basis.spin_counts[:, i].astype(float)
    return np.sqrt(np.clip(n * (basis.capacities[i] - n + 1.0), 0.0, None))


def _unit(basis: SectorBasis, i: int, k: int = 1) -> np.ndarray:
    d = np.zeros(basis.counts.shape[1], dtype=np.int64)
    d[i] = k
    return d


def _sz(basis: SectorBasis, i: int) -> np.ndarray:
    return basis.spin_counts[:, i] - _spins(basis)[i]


def _add_hop(B: _Builder, i: int, j: int, c: complex) -> None:
    """c · S⁺_i S⁻_j."""
    b = B.basis
    if c == 0:
        return
    if i == j:
        n = b.spin_counts[:, i].astype(float)
        B.diag(n * (b.capacities[i] - n + 1.0), c)
        return
    n_i = b.spin_counts[:, i].astype(float)
    amp = _lower_amp(b, j) * np.sqrt(np.clip((n_i + 1.0) * (b.capacities[i] - n_i), 0.0, None))
    B.move(_unit(b, i) - _unit(b, j), amp, c)


def _add_flip_flop(B: _Builder, i: int, j: int, c: complex) -> None:
    """c · ½(S⁺_i S⁻_j + S⁻_i S⁺_j), i ≠ j."""
    _add_hop(B, i, j, 0.5 * c)
    _add_hop(B, j, i, 0.5 * c)


def _add_szsz(B: _Builder, i: int, j: int, c: complex) -> None:
    B.diag(_sz(B.basis, i) * _sz(B.basis, j), c)


def _add_single_flip(B: _Builder, i: int, c_up: complex, c_down: complex) -> None:
    """c_up S⁺_i + c_down S⁻_i (all-N sectors)."""
    b = B.basis
    B.move(_unit(b, i), _raise_amp(b, i), c_up)
    B.move(-_unit(b, i), _lower_amp(b, i), c_down)


def _add_boson_exchange(B: _Builder, i: int, c: complex) -> None:
    """c (S⁺_i b + S⁻_i b†)."""
    b = B.basis
    nb = b.boson_counts.astype(float)
    L = b.L
    B.move(_unit(b, i) - _unit(b, L), _raise_amp(b, i) * np.sqrt(nb), c)
    B.move(-_unit(b, i) + _unit(b, L), _lower_amp(b, i) * np.sqrt(nb + 1.0), c)


def _require_basis(model: ModelSpec, basis: Optional[SectorBasis], cap: int) -> SectorBasis:
    basis = basis if basis is not None else sector_basis(model, cap=cap)
    if basis.L != model.L:
        raise CapacityError(f"basis has {basis.L} levels, model has {model.L}")
    return basis


def _gaudin_charge(B: _Builder, model: ModelSpec, i: int, g: float) -> None:
    """Q_i = S^z_i + g Σ_j [X_ij (S^x S^x + S^y S^y) + Z_ij S^z S^z]."""
    k = model.gaudin_kernel
    X = x_matrix(k, model.eps)
    Z = z_matrix(k, model.eps)
    B.diag(_sz(B.basis, i))
    for j in range(model.L):
        if j == i:
            continue
        _add_flip_flop(B, i, j, g * X[i, j])
        _add_szsz(B, i, j, g * Z[i, j])


# ----------------------------
# Hamiltonians
# ----------------------------
def build_hamiltonian(model: ModelSpec, basis: Optional[SectorBasis] = None,
                      G_matrix=None, cap: int = ED_DIM_CAP) -> DenseOperator:
    """
    - rational:       Σ 2ε_i n_i + Σ_ij G_ij S⁺_i S⁻_j  (G_ij = g unless G_matrix is given)
    - hyperbolic:     Σ η_i n_i - G Σ_{i≠j} √(η_iη_j) S⁺_i S⁻_j
    - central spin:   B_z Q_index
    - bath:           p+ip plus γ Σ √η_i (S⁺_i + S⁻_i)
    - dicke:          ε₀ b†b + Σ ε_i S^z_i + G Σ (S⁺_i b + S⁻_i b†)
    - ext-p+ip:       Σ_i Q_i
    """
    basis = _require_basis(model, basis, cap)
    B = _Builder(basis)
    e = model.eps
    L = model.L
    kind = model.extension.kind
    if G_matrix is not None and not (kind == "none" and model.kernel == "rational"):
        raise UnsupportedVariantError("an explicit pairing matrix is only defined for rational pairing models")

    if kind == "central_spin":
        _gaudin_charge(B, model, model.extension.index, model.g)
        return DenseOperator(model.extension.B_z * B.dense(), basis, "central_spin")

    if kind == "dicke":
        ext = model.extension
        B.diag(basis.boson_counts, ext.eps0)
        for i in range(L):
            B.diag(_sz(basis, i), e[i])
            _add_boson_exchange(B, i, ext.G)
        return DenseOperator(B.dense(), basis, "dicke")

    if kind == "ext_pip":
        for i in range(L):
            _ext_pip_charge(B, model, i)
        return DenseOperator(B.dense(), basis, "ext_pip")

    if kind == "bath":
        ext = model.extension
        for i in range(L):
            B.diag(basis.spin_counts[:, i], e[i])
            _add_single_flip(B, i, ext.gamma * np.sqrt(e[i]), ext.gamma * np.sqrt(e[i]))
            for j in range(L):
                if j != i:
                    _add_hop(B, i, j, -ext.G * np.sqrt(e[i] * e[j]))
        return DenseOperator(B.dense(), basis, "pip_bath")

    if model.kernel == "rational":
        G = np.full((L, L), model.g) if G_matrix is None else np.asarray(G_matrix, dtype=float)
        if G.shape != (L, L):
            raise CapacityError(f"pairing matrix has shape {G.shape}, expected ({L}, {L})")
        for i in range(L):
            B.diag(basis.spin_counts[:, i], 2.0 * e[i])
            for j in range(L):
                _add_hop(B, i, j, G[i, j])
        return DenseOperator(B.dense(), basis, "bcs")

    if model.kernel == "hyperbolic":
        G = pip_coupling(model)
        for i in range(L):
            B.diag(basis.spin_counts[:, i], e[i])
            for j in range(L):
                if j != i:
                    _add_hop(B, i, j, -G * np.sqrt(e[i] * e[j]))
        return DenseOperator(B.dense(), basis, "pip")

    raise UnsupportedVariantError(f"no Hamiltonian for kernel={model.kernel}")


def _ext_pip_charge(B: _Builder, model: ModelSpec, i: int) -> None:
    ext = model.extension
    e = model.eps
    basis = B.basis
    Z = z_matrix(model.gaudin_kernel, e)
    for j in range(model.L):
        if j == i:
            continue
        _add_flip_flop(B, i, j, 2.0 * np.sqrt(e[i] * e[j]) / (e[i] - e[j]))
        _add_szsz(B, i, j, Z[i, j])
    _add_boson_exchange(B, i, ext.eta0 / np.sqrt(e[i]))
    B.diag(_sz(basis, i) * (ext.kappa + basis.boson_counts - ext.eta0 ** 2 / e[i]))


# ----------------------------
# Conserved charges
# ----------------------------
def build_charge(model: ModelSpec, i: int, basis: Optional[SectorBasis] = None,
                 shifted: Optional[bool] = None, cap: int = ED_DIM_CAP) -> DenseOperator:
    """Operator whose eigenvalues charge_eigenvalues() returns for the same model."""
    basis = _require_basis(model, basis, cap)
    if not 0 <= i < model.L:
        raise CapacityError(f"charge index {i} out of range for L={model.L}")
    B = _Builder(basis)
    e = model.eps
    kind = model.extension.kind

    if kind == "bath":
        ext = model.extension
        B.diag(basis.spin_counts[:, i])
        _add_single_flip(B, i, ext.gamma / np.sqrt(e[i]), ext.gamma / np.sqrt(e[i]))
        for j in range(model.L):
            if j == i:
                continue
            d = e[i] - e[j]
            _add_flip_flop(B, i, j, -2.0 * ext.G * np.sqrt(e[i] * e[j]) / d)
            _add_szsz(B, i, j, -2.0 * ext.G * e[j] / d)
            B.diag(np.ones(basis.dim), 0.5 * ext.G * e[j] / d)
        return DenseOperator(B.dense(), basis, f"Q_{i}")

    if kind == "dicke":
        ext = model.extension
        R = x_matrix(model.gaudin_kernel, e)
        B.diag(_sz(basis, i), ext.eps0 - e[i])
        _add_boson_exchange(B, i, -ext.G)
        for j in range(model.L):
            if j == i:
                continue
            _add_flip_flop(B, i, j, -2.0 * ext.G ** 2 * R[i, j])
            _add_szsz(B, i, j, -2.0 * ext.G ** 2 * R[i, j])
        return DenseOperator(B.dense(), basis, f"R_{i}")

    if kind == "ext_pip":
        _ext_pip_charge(B, model, i)
        return DenseOperator(B.dense(), basis, f"Q_{i}")

    if model.kernel == "trigonometric" and basis.kind != "fixed_N":
        raise UnsupportedVariantError("trigonometric charges are built in fixed-N sectors only")
    _gaudin_charge(B, model, i, model.g)
    A = B.dense()
    if shifted is None:
        shifted = model.spin_half
    if shifted:
        if not model.spin_half:
            raise UnsupportedVariantError("shifted charges are defined for spin-1/2 models")
        Z = z_matrix(model.gaudin_kernel, e)
        A = A + (0.5 - 0.25 * model.g * Z[i].sum()) * np.eye(basis.dim)
    return DenseOperator(A, basis, f"Q_{i}")


def sz_operator(basis: SectorBasis, i: int) -> DenseOperator:
    return DenseOperator(np.diag(_sz(basis, i).astype(float)), basis, f"Sz_{i}")


def number_operator(basis: SectorBasis, i: Optional[int] = None) -> DenseOperator:
    """Pair count on level i, or the total pair count."""
    n = basis.spin_counts.sum(axis=1) if i is None else basis.spin_counts[:, i]
    return DenseOperator(np.diag(n.astype(float)), basis, "N" if i is None else f"n_{i}")


def pair_operator(basis: SectorBasis, i: int) -> DenseOperator:
    """S⁺_i (pair creation on level i) in an all-N sector."""
    if basis.kind != "all_N_even_parity":
        raise UnsupportedVariantError("pair creation leaves a fixed-N sector")
    B = _Builder(basis)
    B.move(_unit(basis, i), _raise_amp(basis, i))
    return DenseOperator(B.dense(), basis, f"S+_{i}")


def spin_dot_operator(basis: SectorBasis, i: int, j: int) -> DenseOperator:
    """S_i · S_j."""
    B = _Builder(basis)
    if i == j:
        s = _spins(basis)[i]
        B.diag(np.full(basis.dim, s * (s + 1.0)))
    else:
        _add_flip_flop(B, i, j, 1.0)
        _add_szsz(B, i, j, 1.0)
    return DenseOperator(B.dense(), basis, f"S{i}.S{j}")


def pairing_operator(basis: SectorBasis, eps, G_matrix) -> DenseOperator:
    """Σ 2ε_i n_i + Σ G_ij S⁺_i S⁻_j for an arbitrary real symmetric G."""
    e = np.asarray(eps, dtype=float)
    G = np.asarray(G_matrix, dtype=float)
    B = _Builder(basis)
    for i in range(basis.L):
        B.diag(basis.spin_counts[:, i], 2.0 * e[i])
        for j in range(basis.L):
            _add_hop(B, i, j, G[i, j])
    return DenseOperator(B.dense(), basis, "pairing")


# ----------------------------
# Diagonalization
# ----------------------------
def diagonalize(op: DenseOperator, n_lowest: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and column eigenvectors; `n_lowest` limits the subset."""
    A = op.matrix
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    defect = op.hermiticity_defect()
    if defect > HERMITIAN_TOL * scale:
        raise NonHermitianError(f"operator {op.label or '?'} not hermitian (defect {defect:.3e})")
    if op.dim == 0:
        return np.zeros(0), np.zeros((0, 0))
    if n_lowest is not None and n_lowest < op.dim:
        w, V = eigh(A, subset_by_index=[0, max(n_lowest, 1) - 1])
    else:
        w, V = eigh(A)
    res = float(np.max(np.abs(A @ V - V * w[None, :]))) if len(w) else 0.0
    if res > 1e-10 * scale * max(1.0, np.sqrt(op.dim)):
        logger.warning("eigen-residual %.3e for %s (dim %d)", res, op.label, op.dim)
    return w, V


def expectation(op: DenseOperator, vec) -> complex:
    """⟨v|A|v⟩ / ⟨v|v⟩."""
    v = np.asarray(vec)
    if v.shape[0] != op.dim:
        raise ValueError(f"vector has length {v.shape[0]}, operator dimension is {op.dim}")
    val = np.vdot(v, op.matrix @ v) / np.vdot(v, v)
    return complex(val) if np.iscomplexobj(val) and abs(val.imag) > 0 else float(np.real(val))


def commutator_norm(a: DenseOperator, b: DenseOperator) -> float:
    A, Bm = a.matrix, b.matrix
    return float(np.max(np.abs(A @ Bm - Bm @ A))) if A.size else 0.0


def match_spectra(a, b, tol: float) -> Tuple[bool, float]:
    """
    Bipartite matching of two eigenvalue multisets under |a_i - b_j| < tol.
    Returns (complete matching found, max deviation over matched pairs).
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if len(a) != len(b):
        return False, float("inf")
    G = nx.Graph()
    left = [("a", i) for i in range(len(a))]
    G.add_nodes_from(left, bipartite=0)
    G.add_nodes_from((("b", j) for j in range(len(b))), bipartite=1)
    for i, x in enumerate(a):
        lo = np.searchsorted(b, x - tol, side="left")
        hi = np.searchsorted(b, x + tol, side="right")
        for j in range(lo, hi):
            G.add_edge(("a", i), ("b", j))
    M = nx.bipartite.hopcroft_karp_matching(G, top_nodes=left)
    pairs = [(u[1], v[1]) for u, v in M.items() if u[0] == "a"]
    if len(pairs) != len(a):
        return False, float(np.max(np.abs(a - b))) if len(a) else 0.0
    dev = max((abs(a[i] - b[j]) for i, j in pairs), default=0.0)
    return True, float(dev)
