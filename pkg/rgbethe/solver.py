# rgbethe/solver.py
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import lu_factor, lu_solve

from rgbethe.config import (
    CLEAN_STEPS_TO_GROW,
    CROSSING_PERTURBATION,
    NEWTON_MAX_ITER,
    STEP_GROW,
    TAU_RESIDUAL,
)
from rgbethe.errors import (
    CapacityError,
    NoConvergenceError,
    NumericalError,
    SingularSystemError,
    StepUnderflowError,
    UnsupportedVariantError,
)
from rgbethe.evb import EvbSystem, SpinHalfSystem, SpinOneSystem, default_small_parameter, system_for
from rgbethe.schema import ModelSpec, coupling_parameter, with_coupling
from rgbethe.states import EvbVariables, OccupationPattern, compositions

logger = logging.getLogger(__name__)


# ----------------------------
# Options / traces
# ----------------------------
class SweepOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    g_start: Optional[float] = None          # None: weak-coupling default
    g_target: float
    step_init: Optional[float] = None        # None: |g_target - g_start| / 40
    step_min: float = Field(default=1e-9, gt=0.0)
    newton_max_iter: int = Field(default=NEWTON_MAX_ITER, ge=1)
    taylor_order: int = Field(default=2, ge=1, le=2)
    tol: float = Field(default=TAU_RESIDUAL, gt=0.0)

    @model_validator(mode="after")
    def _signs(self) -> "SweepOptions":
        if self.g_start is not None and self.g_start * self.g_target < 0:
            raise ValueError(f"g_start={self.g_start} and g_target={self.g_target} have opposite signs")
        return self


@dataclass
class SweepTrace:
    pattern: OccupationPattern
    grid: List[float] = field(default_factory=list)
    states: List[EvbVariables] = field(default_factory=list)
    iterations: List[int] = field(default_factory=list)
    halvings: List[float] = field(default_factory=list)

    @property
    def final(self) -> EvbVariables:
        return self.states[-1]


# ----------------------------
# Patterns
# ----------------------------
def enumerate_patterns(L: int, N: int, degeneracies: Optional[Sequence[float]] = None) -> List[OccupationPattern]:
    """Lexicographic in per-level counts; count equals the sector dimension."""
    d = list(degeneracies) if degeneracies is not None else [0.5] * L
    if len(d) != L:
        raise CapacityError(f"{len(d)} degeneracies for L={L}")
    caps = [int(round(2 * x)) for x in d]
    if N < 0 or N > sum(caps):
        raise CapacityError(f"N={N} outside [0, {sum(caps)}]")
    return [OccupationPattern(c) for c in compositions(caps, N)]


def lowest_pattern(model: ModelSpec) -> OccupationPattern:
    """Fill levels in ascending order up to capacity."""
    caps = model.capacities
    counts = [0] * model.L
    left = model.N
    for i in np.argsort(model.eps, kind="stable"):
        take = min(int(caps[i]), left)
        counts[i] = take
        left -= take
    return OccupationPattern(tuple(counts))


# ----------------------------
# Newton
# ----------------------------
def _newton(sys: EvbSystem, x: np.ndarray, p: float, max_iter: int, tol: float) -> Tuple[np.ndarray, int]:
    x = np.array(x, dtype=float)
    F = sys.residual(x, p)
    res = float(np.max(np.abs(F))) if len(F) else 0.0
    for it in range(max_iter + 1):
        if not np.isfinite(res):
            raise NoConvergenceError("Newton iterate left the finite range", res)
        if res < tol:
            return x, it
        if it == max_iter:
            break
        J = sys.jacobian(x, p)
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise NoConvergenceError(f"singular Newton Jacobian at p={p:.6g}", res) from exc
        x = x + dx
        F = sys.residual(x, p)
        new = float(np.max(np.abs(F)))
        if np.max(np.abs(dx)) < 1e-15 * (1.0 + np.max(np.abs(x))) and new < 1e3 * tol:
            return x, it + 1
        res = new
    raise NoConvergenceError(f"Newton did not converge in {max_iter} iterations at p={p:.6g}", res)


def init_weak_coupling(model: ModelSpec, pattern: OccupationPattern, g_small: Optional[float] = None) -> EvbVariables:
    """gΛ_i = -2n_i + g λ_i⁽⁰⁾ (spin-1/2); the variant's analogue otherwise."""
    sys = system_for(model)
    p = default_small_parameter(model) if g_small is None else float(g_small)
    return sys.to_evb(sys.seed(pattern, p), p)


def newton_refine(model: ModelSpec, guess: EvbVariables, max_iter: int = NEWTON_MAX_ITER,
                  tol: float = TAU_RESIDUAL) -> EvbVariables:
    sys = system_for(with_coupling(model, guess.g))
    x, it = _newton(sys, sys.from_evb(guess), guess.g, max_iter, tol)
    logger.debug("newton_refine converged in %d iterations at p=%.6g", it, guess.g)
    return sys.to_evb(x, guess.g, iterations=it)


# ----------------------------
# Derivatives
# ----------------------------
def _factor(J: np.ndarray):
    lu, piv = lu_factor(J, check_finite=True)
    d = np.abs(np.diag(lu))
    if d.min() <= 1e-14 * max(d.max(), 1.0):
        raise SingularSystemError("derivative system is singular (exact level crossing)")
    return lu, piv


def _branch_derivatives(sys: EvbSystem, x: np.ndarray, p: float, order: int):
    lu = _factor(sys.jacobian(x, p))
    xp = lu_solve(lu, -sys.dparam(x, p))
    xpp = lu_solve(lu, -sys.curvature(x, p, xp)) if order >= 2 else None
    return xp, xpp


def dlambda_dg(model: ModelSpec, evb: EvbVariables, order: int = 1):
    """
    ∂Λ/∂g (and ∂²Λ/∂g²) from the linearized equations; both orders share one LU factorization.
    Returns dΛ or (dΛ, d²Λ).
    """
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    m = with_coupling(model, evb.g)
    sys = system_for(m)
    if not isinstance(sys, (SpinHalfSystem, SpinOneSystem)):
        raise UnsupportedVariantError("dlambda_dg is defined for Gaudin spin models")
    if m.N == 0:
        z = np.zeros(m.L)
        return (z, z.copy()) if order == 2 else z
    g = evb.g
    x = sys.from_evb(evb)
    try:
        xp, xpp = _branch_derivatives(sys, x, g, order)
    except SingularSystemError:
        g2 = g * (1.0 + CROSSING_PERTURBATION)
        logger.debug("singular derivative system at g=%.12g, retrying at %.12g", g, g2)
        m2 = with_coupling(model, g2)
        evb = newton_refine(m2, EvbVariables(lambdas=evb.lambdas, g=g2, lambda2=evb.lambda2))
        sys = system_for(m2)
        g = g2
        x = sys.from_evb(evb)
        xp, xpp = _branch_derivatives(sys, x, g, order)
    L = m.L
    lam = np.asarray(evb.lambdas)
    d1 = (xp[:L] - lam) / g
    if order == 1:
        return d1
    d2 = (xpp[:L] - 2.0 * d1) / g
    return d1, d2


def occupations(model: ModelSpec, evb: EvbVariables, deriv: Optional[np.ndarray] = None) -> np.ndarray:
    """⟨S^z_i⟩ = -s_i + s_i g² ∂Λ_i/∂g (Hellmann-Feynman)."""
    if deriv is None:
        deriv = dlambda_dg(model, evb, order=1)
    s = model.spins
    return -s + s * evb.g ** 2 * np.asarray(deriv)


# ----------------------------
# Continuation
# ----------------------------
def sweep_g(model: ModelSpec, pattern: OccupationPattern, opts: SweepOptions,
            start: Optional[EvbVariables] = None) -> SweepTrace:
    """
    Adaptive continuation in the coupling parameter with Taylor predictor:
      - halve on Newton failure or on a jump away from the predictor
      - grow ×1.5 after 3 clean steps, never above step_init
    `start` resumes from a known solution instead of the weak-coupling seed.
    """
    target = float(opts.g_target)
    trace = SweepTrace(pattern=pattern)
    if start is None:
        p = opts.g_start if opts.g_start is not None else default_small_parameter(model, target)
        m0 = with_coupling(model, p)
        sys = system_for(m0)
        x, it = _newton(sys, sys.seed(pattern, p), p, opts.newton_max_iter, opts.tol)
    else:
        p = start.g
        sys = system_for(with_coupling(model, p))
        x, it = _newton(sys, sys.from_evb(start), p, opts.newton_max_iter, opts.tol)
    trace.grid.append(p)
    trace.states.append(sys.to_evb(x, p, iterations=it))
    trace.iterations.append(it)

    span = abs(target - p)
    step_max = opts.step_init if opts.step_init is not None else max(span / 40.0, 10 * opts.step_min)
    step = step_max
    direction = 1.0 if target >= p else -1.0
    clean = 0
    while abs(target - p) > 1e-15 * max(1.0, abs(target)):
        h = direction * min(step, abs(target - p))
        p_new = target if abs(target - p) <= step else p + h
        h = p_new - p
        try:
            xp, xpp = _branch_derivatives(sys, x, p, opts.taylor_order)
            x_pred = x + h * xp + (0.5 * h * h * xpp if xpp is not None else 0.0)
            x_new, it = _newton(sys, x_pred, p_new, opts.newton_max_iter, opts.tol)
            jump = np.max(np.abs(x_new - x_pred))
            if jump > 0.1 * (1.0 + np.max(np.abs(x))):
                raise NoConvergenceError(f"corrector jumped by {jump:.3e}", float(jump))
        except NumericalError as exc:
            step *= 0.5
            clean = 0
            trace.halvings.append(p)
            logger.debug("step halved to %.3e at p=%.12g (%s)", step, p, exc)
            if step < opts.step_min:
                raise StepUnderflowError(p, step) from exc
            continue
        p, x = p_new, x_new
        trace.grid.append(p)
        trace.states.append(sys.to_evb(x, p, iterations=it))
        trace.iterations.append(it)
        clean += 1
        if clean >= CLEAN_STEPS_TO_GROW:
            step = min(step * STEP_GROW, step_max)
            clean = 0
    return trace


def solve_at(model: ModelSpec, pattern: OccupationPattern, g_target: Optional[float] = None,
             opts: Optional[SweepOptions] = None) -> EvbVariables:
    target = coupling_parameter(model) if g_target is None else float(g_target)
    opts = opts or SweepOptions(g_target=target)
    return sweep_g(model, pattern, opts).final


def patterns_for(model: ModelSpec) -> List[OccupationPattern]:
    kind = model.extension.kind
    if kind in ("dicke", "ext_pip"):
        out: List[OccupationPattern] = []
        for M in range(0, min(model.N, model.L) + 1):
            out.extend(enumerate_patterns(model.L, M, model.d))
        return out
    if kind == "bath":
        out = []
        for M in range(0, model.L + 1):
            out.extend(enumerate_patterns(model.L, M, model.d))
        return out
    return enumerate_patterns(model.L, model.N, model.d)


def solve_all(model: ModelSpec, g_target: Optional[float] = None, threads: int = 1,
              opts: Optional[SweepOptions] = None) -> Dict[OccupationPattern, EvbVariables]:
    """One solution per weak-coupling pattern; sweeps run concurrently."""
    target = coupling_parameter(model) if g_target is None else float(g_target)
    opts = opts or SweepOptions(g_target=target)
    pats = patterns_for(model)

    def run(pat: OccupationPattern):
        try:
            return pat, sweep_g(model, pat, opts).final
        except NumericalError as exc:
            err = NumericalError(f"pattern {pat.label()}: {exc}")
            err.pattern = pat
            raise err from exc

    if threads > 1 and len(pats) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, pats))
    else:
        results = [run(p) for p in pats]
    out = dict(results)

    lam = np.array([np.asarray(e.lambdas) for e in out.values()])
    if len(lam) > 1:
        diff = np.abs(lam[:, None, :] - lam[None, :, :]).max(axis=2)
        np.fill_diagonal(diff, np.inf)
        i, j = np.unravel_index(np.argmin(diff), diff.shape)
        if diff[i, j] < 1e-6:
            keys = list(out.keys())
            raise NumericalError(f"patterns {keys[i].label()} and {keys[j].label()} converged to the same state")
    return out


# ----------------------------
# Level homotopy
# ----------------------------
def track_levels(model: ModelSpec, start: EvbVariables, levels, step_init: float = 0.25,
                 step_min: float = 1e-6, tol: float = TAU_RESIDUAL,
                 max_iter: int = NEWTON_MAX_ITER) -> Tuple[ModelSpec, EvbVariables]:
    """
    Follow a solution from model.levels to `levels` along ε(t) = (1-t)ε₀ + tε₁ at
    fixed coupling. Linear extrapolation from the last two points predicts each step.
    """
    e0 = model.eps
    e1 = np.asarray(levels, dtype=float)
    if e1.shape != e0.shape:
        raise CapacityError(f"{len(e1)} target levels for L={model.L}")
    p = start.g

    def at(t: float) -> ModelSpec:
        return model.model_copy(update={"levels": list((1.0 - t) * e0 + t * e1)})

    sys = system_for(model)
    x, _ = _newton(sys, sys.from_evb(start), p, max_iter, tol)
    t, x_prev, t_prev = 0.0, None, None
    step = step_init
    clean = 0
    while t < 1.0:
        t_new = min(1.0, t + step)
        x_pred = x if x_prev is None else x + (t_new - t) / (t - t_prev) * (x - x_prev)
        try:
            sys_new = system_for(at(t_new))
            x_new, _ = _newton(sys_new, x_pred, p, max_iter, tol)
            jump = np.max(np.abs(x_new - x_pred))
            if jump > 0.1 * (1.0 + np.max(np.abs(x))):
                raise NoConvergenceError(f"level homotopy jumped by {jump:.3e}", float(jump))
        except (NumericalError, ValueError) as exc:
            step *= 0.5
            clean = 0
            logger.debug("level homotopy step halved to %.3e at t=%.6g (%s)", step, t, exc)
            if step < step_min:
                raise StepUnderflowError(t, step) from exc
            continue
        x_prev, t_prev = x, t
        x, t, sys = x_new, t_new, sys_new
        clean += 1
        if clean >= CLEAN_STEPS_TO_GROW:
            step = min(step * STEP_GROW, step_init)
            clean = 0
    final = at(1.0)
    return final, sys.to_evb(x, p)
