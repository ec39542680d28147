# rgbethe/states.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from rgbethe.errors import CapacityError


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


def compositions(caps: Sequence[int], N: int) -> Iterator[Tuple[int, ...]]:
    """Per-level counts 0 ≤ n_i ≤ caps[i] with Σ n_i = N, lexicographic."""
    L = len(caps)
    tail = [0] * (L + 1)
    for i in range(L - 1, -1, -1):
        tail[i] = tail[i + 1] + caps[i]

    def rec(i: int, left: int, acc: List[int]):
        if i == L:
            if left == 0:
                yield tuple(acc)
            return
        lo = max(0, left - tail[i + 1])
        hi = min(caps[i], left)
        for n in range(lo, hi + 1):
            acc.append(n)
            yield from rec(i + 1, left - n, acc)
            acc.pop()

    yield from rec(0, N, [])


@dataclass(frozen=True)
class OccupationPattern:
    """Per-level excitation counts n_i in the g → 0 limit."""
    counts: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @classmethod
    def from_occupied(cls, L: int, occupied: Iterable[int]) -> "OccupationPattern":
        c = [0] * L
        for i in occupied:
            c[i] += 1
        return cls(tuple(c))

    @property
    def N(self) -> int:
        return sum(self.counts)

    @property
    def L(self) -> int:
        return len(self.counts)

    @property
    def occupied(self) -> Tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.counts) if c > 0)

    def check(self, capacities: Sequence[int], N: Optional[int] = None) -> "OccupationPattern":
        if len(capacities) != self.L:
            raise CapacityError(f"pattern has {self.L} levels, model has {len(capacities)}")
        for i, (c, cap) in enumerate(zip(self.counts, capacities)):
            if c < 0 or c > cap:
                raise CapacityError(f"level {i}: count {c} outside [0, {cap}]")
        if N is not None and self.N != N:
            raise CapacityError(f"pattern holds {self.N} excitations, model has N={N}")
        return self

    def complement(self, capacities: Sequence[int]) -> "OccupationPattern":
        return OccupationPattern(tuple(int(cap) - c for c, cap in zip(self.counts, capacities)))

    def label(self) -> str:
        return "".join(str(c) for c in self.counts)


@dataclass(frozen=True)
class BetheRoots:
    """Rapidities v_a; Read-Green zeros are stored as exact 0j."""
    roots: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "roots", _frozen(self.roots, complex))

    @property
    def N(self) -> int:
        return len(self.roots)

    @property
    def n_zero(self) -> int:
        return int(np.sum(self.roots == 0))

    def sorted(self) -> "BetheRoots":
        r = self.roots
        order = np.lexsort((r.imag, r.real))
        return BetheRoots(r[order])


@dataclass(frozen=True)
class EvbVariables:
    """
    Eigenvalue-based variables at coupling parameter `g`.

    lambdas holds the variant's primary real unknowns divided by their scale:
      - spin-1/2, spin-1, ext-p+ip: Λ_i = Σ_a Z(ε_i, v_a)
      - dicke: Λ_i = Σ_a 1/(ε_i - v_a)
      - bath: the charge eigenvalues q_k
    lambda0 is the boson variable (Dicke, ext-p+ip); lambda2 the second set for spin-1 levels.
    """
    lambdas: np.ndarray
    g: float
    lambda0: Optional[float] = None
    lambda2: Optional[np.ndarray] = None
    iterations: int = field(default=0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "lambdas", _frozen(self.lambdas, float))
        if self.lambda2 is not None:
            object.__setattr__(self, "lambda2", _frozen(self.lambda2, float))

    @property
    def scaled(self) -> np.ndarray:
        return self.g * self.lambdas

    @property
    def L(self) -> int:
        return len(self.lambdas)
