# rgbethe/apps/readgreen.py
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from rgbethe.config import ED_DIM_CAP
from rgbethe.ed import build_hamiltonian, diagonalize, number_operator, pair_operator, sector_basis
from rgbethe.errors import ConfigError
from rgbethe.schema import bath_model, readgreen_inverse_coupling

logger = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-9
DEGENERACY_OFFSET = 1e-9


@dataclass
class ReadGreenScan:
    """Ground-state observables of the p+ip levels coupled to a bath, one row per G⁻¹."""
    levels: List[float]
    gamma: float
    inverse_couplings: List[float] = field(default_factory=list)
    pair_number: List[float] = field(default_factory=list)
    pair_amplitude: List[List[float]] = field(default_factory=list)   # ⟨S⁺_k⟩ = ⟨c†_k c†_-k⟩
    occupation: List[List[float]] = field(default_factory=list)       # ⟨n_k⟩
    gap: List[float] = field(default_factory=list)
    flagged: List[bool] = field(default_factory=list)

    @property
    def L(self) -> int:
        return len(self.levels)

    def readgreen_points(self) -> List[float]:
        """G⁻¹ = L - 2N - 1 for N = 0 .. L/2 - 1."""
        return [readgreen_inverse_coupling(self.L, n) for n in range(self.L // 2)]

    def rows(self) -> List[List[float]]:
        out = []
        for i, x in enumerate(self.inverse_couplings):
            out.append([x, self.pair_number[i], self.gap[i], float(self.flagged[i])]
                       + list(self.pair_amplitude[i]) + list(self.occupation[i]))
        return out

    def header(self) -> List[str]:
        return (["G_inv", "pair_number", "gap", "flagged"]
                + [f"pair_amp_{k}" for k in range(self.L)]
                + [f"n_{k}" for k in range(self.L)])


def _ground(levels: Sequence[float], gamma: float, G_inv: float, cap: int):
    model = bath_model(levels, 1.0 / G_inv, gamma)
    basis = sector_basis(model, cap=cap)
    w, V = diagonalize(build_hamiltonian(model, basis), n_lowest=2)
    return basis, w, V


def _observables(basis, vec: np.ndarray):
    vec = np.real_if_close(vec)
    n_tot = float(vec @ (number_operator(basis).matrix @ vec))
    amp = [float(np.real(vec @ (pair_operator(basis, k).matrix @ vec))) for k in range(basis.L)]
    occ = [float(vec @ (number_operator(basis, k).matrix @ vec)) for k in range(basis.L)]
    return n_tot, amp, occ


def scan_point(levels: Sequence[float], gamma: float, G_inv: float, cap: int = ED_DIM_CAP) -> dict:
    """
    Observables at one coupling. A degenerate ground state keeps its gap but
    takes its observables at G⁻¹ + 1e-9 so the reported state is well defined.
    """
    if G_inv == 0:
        raise ConfigError("G⁻¹ = 0 is not a finite coupling")
    basis, w, V = _ground(levels, gamma, G_inv, cap)
    gap = float(w[1] - w[0]) if len(w) > 1 else 0.0
    flagged = gap < DEGENERACY_TOL * max(1.0, abs(float(w[0])))
    if flagged:
        logger.debug("degenerate ground state at G⁻¹=%.12g (gap %.3e), shifting", G_inv, gap)
        basis, _, V = _ground(levels, gamma, G_inv + DEGENERACY_OFFSET, cap)
    n_tot, amp, occ = _observables(basis, V[:, 0])
    return {"G_inv": float(G_inv), "pair_number": n_tot, "pair_amplitude": amp,
            "occupation": occ, "gap": max(gap, 0.0), "flagged": bool(flagged)}


def readgreen_scan(levels: Sequence[float], gamma: float, inverse_couplings: Sequence[float],
                   threads: int = 1, cap: int = ED_DIM_CAP) -> ReadGreenScan:
    """ED scan of the bath-coupled p+ip ground state over a G⁻¹ grid; points run concurrently."""
    levels = [float(x) for x in levels]
    grid = [float(x) for x in inverse_couplings]
    if any(x <= 0 for x in levels):
        raise ConfigError("p+ip levels η_k must be positive")

    def run(x: float) -> dict:
        return scan_point(levels, gamma, x, cap)

    if threads > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(run, grid))
    else:
        points = [run(x) for x in grid]

    scan = ReadGreenScan(levels=levels, gamma=float(gamma))
    for p in points:
        scan.inverse_couplings.append(p["G_inv"])
        scan.pair_number.append(p["pair_number"])
        scan.pair_amplitude.append(p["pair_amplitude"])
        scan.occupation.append(p["occupation"])
        scan.gap.append(p["gap"])
        scan.flagged.append(p["flagged"])
    logger.debug("readgreen scan: %d points, %d flagged", len(points), sum(scan.flagged))
    return scan


def transition_points(scan: ReadGreenScan) -> List[float]:
    """G⁻¹ where ⟨N̂⟩ crosses each half-integer, by linear interpolation (grid ascending in G⁻¹)."""
    x = np.asarray(scan.inverse_couplings, dtype=float)
    n = np.asarray(scan.pair_number, dtype=float)
    order = np.argsort(x)
    x, n = x[order], n[order]
    out: List[float] = []
    for i in range(len(x) - 1):
        lo, hi = sorted((n[i], n[i + 1]))
        for half in np.arange(np.ceil(lo - 0.5), np.floor(hi - 0.5) + 1) + 0.5:
            if lo < half <= hi and n[i + 1] != n[i]:
                t = (half - n[i]) / (n[i + 1] - n[i])
                out.append(float(x[i] + t * (x[i + 1] - x[i])))
    return out


def peak_ratio(scan: ReadGreenScan, level: int, window: float = 0.25) -> Optional[float]:
    """Max |⟨S⁺_k⟩| within `window` of any Read-Green point over the max elsewhere."""
    x = np.asarray(scan.inverse_couplings, dtype=float)
    a = np.abs(np.asarray([row[level] for row in scan.pair_amplitude], dtype=float))
    near = np.zeros(len(x), dtype=bool)
    for p in scan.readgreen_points():
        near |= np.abs(x - p) <= window
    if not near.any() or near.all():
        return None
    off = float(a[~near].max())
    return float(a[near].max()) / off if off > 0 else float("inf")
