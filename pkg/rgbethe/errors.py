# rgbethe/errors.py
from __future__ import annotations

from typing import Optional, Sequence


# ----------------------------
# Input / configuration errors (exit 2)
# ----------------------------
class ConfigError(ValueError):
    pass


class CoincidentArgumentsError(ConfigError):
    def __init__(self, msg: str, indices: Sequence[int] = ()):
        super().__init__(msg)
        self.indices = tuple(indices)


class UnsupportedVariantError(ConfigError):
    pass


class CapacityError(ConfigError):
    pass


class DimensionCapError(ConfigError):
    def __init__(self, dim: int, cap: int):
        super().__init__(f"sector dimension {dim} exceeds cap {cap}")
        self.dim = dim
        self.cap = cap


class NonHermitianError(ConfigError):
    pass


# ----------------------------
# Numerical failures (exit 3)
# ----------------------------
class NumericalError(RuntimeError):
    pass


class NoConvergenceError(NumericalError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (last residual norm {residual:.3e})")
        self.residual = residual


class SingularSystemError(NumericalError):
    pass


class StepUnderflowError(NumericalError):
    def __init__(self, last_good: float, step: float):
        super().__init__(f"continuation step {step:.3e} below minimum; last good parameter {last_good:.12g}")
        self.last_good = last_good
        self.step = step


class SingularPointError(NumericalError):
    def __init__(self, g_blocking: float, detail: str = ""):
        extra = f": {detail}" if detail else ""
        super().__init__(f"singular point blocks continuation near g={g_blocking:.12g}{extra}")
        self.g_blocking = g_blocking


class PolishError(NumericalError):
    def __init__(self, msg: str, residuals: Optional[Sequence[float]] = None):
        super().__init__(msg)
        self.residuals = list(residuals) if residuals is not None else []


class ImaginaryPartError(NumericalError):
    pass


class BackendDisagreementError(NumericalError):
    pass


class CrossingDivergenceError(NumericalError):
    pass


class SumRuleDeficitError(NumericalError):
    def __init__(self, deficit: float, threshold: float):
        super().__init__(
            f"truncation sum-rule deficit {deficit:.3e} above {threshold:.1e}; "
            "extend the basis to two-spin-flip families"
        )
        self.deficit = deficit
        self.threshold = threshold
