# rgbethe/cli.py
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple

import jsonschema
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from rgbethe import __version__
from rgbethe.apps.floquet import (
    FloquetJob,
    FloquetSystem,
    RestrictedFloquet,
    extremal_gap_scan,
    floquet_full_ed,
    floquet_sweep,
)
from rgbethe.apps.readgreen import readgreen_scan, transition_points
from rgbethe.apps.rgci import load_pairing_table, pairing_gap_curve, rgci_run
from rgbethe.apps.variational import Perturbation, variational_optimize
from rgbethe.config import ED_DIM_CAP, resolve_threads, setup_logging
from rgbethe.dense import overlap_dense
from rgbethe.ed import build_charge, build_hamiltonian, diagonalize, match_spectra, sector_basis
from rgbethe.equations import bethe_residuals, charge_eigenvalues, energy_from_lambda
from rgbethe.errors import BackendDisagreementError, ConfigError, NumericalError
from rgbethe.io import ArtifactWriter
from rgbethe.overlaps import OverlapValue, formfactor_sz, norm_gaudin, overlap_detJ, overlap_detK, overlap_slavnov
from rgbethe.rapidities import direct_solve, roots_from_lambda
from rgbethe.schema import ModelSpec, coupling_parameter, with_coupling
from rgbethe.solver import SweepOptions, lowest_pattern, occupations, solve_all, solve_at, sweep_g
from rgbethe.states import BetheRoots, EvbVariables, OccupationPattern

logger = logging.getLogger(__name__)

SCHEMA_PACKAGE = "rgbethe.schemas"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

Command = Literal[
    "solve", "sweep", "roots", "overlap", "spectrum-check", "readgreen",
    "variational", "rgci", "floquet-ed", "floquet-restricted", "floquet-sweep",
]


# ----------------------------
# Job files
# ----------------------------
class JobConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: Literal[1] = 1
    command: Command
    model: Optional[ModelSpec] = None
    params: Dict[str, Any] = Field(default_factory=dict)
    out: Optional[str] = None
    seed: int = Field(default=0, ge=0)
    threads: Optional[int] = Field(default=None, ge=0)


class Grid(BaseModel):
    """Explicit values, or `num` points from start to stop inclusive."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    values: Optional[List[float]] = None
    start: Optional[float] = None
    stop: Optional[float] = None
    num: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _either(self) -> "Grid":
        ranged = self.start is not None and self.stop is not None and self.num > 0
        if (self.values is None) == (not ranged):
            raise ValueError("grid takes either `values` or `start`, `stop` and `num`")
        return self

    def points(self, scale: float = 1.0) -> List[float]:
        pts = self.values if self.values is not None else np.linspace(self.start, self.stop, self.num)
        return [float(x) * scale for x in pts]


class _Params(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class SolveParams(_Params):
    g: Optional[float] = None
    patterns: Optional[List[List[int]]] = None
    with_roots: bool = False


class SweepParams(_Params):
    pattern: Optional[List[int]] = None
    g_target: Optional[float] = None
    g_start: Optional[float] = None
    step_init: Optional[float] = None
    step_min: float = Field(default=1e-9, gt=0.0)
    taylor_order: int = Field(default=2, ge=1, le=2)


class RootsParams(_Params):
    pattern: Optional[List[int]] = None
    g: Optional[float] = None
    route: Literal["auto", "monomial", "ode", "direct"] = "auto"


class StateRef(_Params):
    """An on-shell state by weak-coupling pattern (default: lowest), or explicit rapidities."""
    pattern: Optional[List[int]] = None
    roots: Optional[List[Tuple[float, float]]] = None     # [re, im] pairs, may be off-shell

    @model_validator(mode="after")
    def _one(self) -> "StateRef":
        if self.pattern is not None and self.roots is not None:
            raise ValueError("a state takes `pattern` or `roots`, not both")
        return self


OverlapKind = Literal["detJ", "detK", "slavnov", "norm", "dense", "formfactor_sz"]


class OverlapPair(_Params):
    v: StateRef = Field(default_factory=StateRef)
    w: StateRef = Field(default_factory=StateRef)
    kind: OverlapKind = "detJ"
    site: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _site(self) -> "OverlapPair":
        if (self.kind == "formfactor_sz") != (self.site is not None):
            raise ValueError("`site` goes with kind formfactor_sz and only with it")
        return self


class OverlapParams(_Params):
    g: Optional[float] = None
    pairs: List[OverlapPair] = Field(min_length=1)
    timings: bool = True


class SpectrumCheckParams(_Params):
    g: Optional[float] = None
    tol: float = Field(default=1e-8, gt=0.0)
    cap: int = Field(default=ED_DIM_CAP, ge=1)


class ReadGreenParams(_Params):
    levels: Optional[List[float]] = None
    L: Optional[int] = Field(default=None, ge=2)
    gamma: float = 0.0
    inverse_couplings: Grid
    cap: int = Field(default=ED_DIM_CAP, ge=1)

    @model_validator(mode="after")
    def _levels(self) -> "ReadGreenParams":
        if (self.levels is None) == (self.L is None):
            raise ValueError("give either explicit levels or L for a picket fence η_k = k")
        return self

    @property
    def etas(self) -> List[float]:
        return list(self.levels) if self.levels is not None else [float(k) for k in range(1, self.L + 1)]


class VariationalParams(_Params):
    perturbations: List[Perturbation]
    mode: Literal["full_eps", "line_search_g"] = "full_eps"
    seed_pattern: Optional[List[int]] = None
    eigenstate: Optional[int] = Field(default=None, ge=0)
    g_bounds: Optional[Tuple[float, float]] = None
    max_iter: int = Field(default=200, ge=1)
    with_exact: bool = True


class RgciParams(_Params):
    table: str = "sn116"
    g: Optional[float] = None
    N: Optional[int] = Field(default=None, ge=0)
    bounds: Tuple[float, float] = (-1.0, 0.0)
    max_basis: Optional[int] = Field(default=None, ge=1)
    basis: Literal["auto", "bethe", "integrable"] = "auto"
    gap_particles: Optional[List[int]] = None


class FloquetEdParams(_Params):
    system: FloquetJob = Field(default_factory=FloquetJob)
    periods: Grid
    units: Literal["absolute", "critical"] = "critical"
    cap: int = Field(default=ED_DIM_CAP, ge=1)


class FloquetRestrictedParams(_Params):
    system: FloquetJob = Field(default_factory=lambda: FloquetJob(basis="restricted"))
    periods: Grid
    units: Literal["absolute", "critical"] = "critical"
    strict: bool = True


class FloquetSweepParams(_Params):
    system: FloquetJob = Field(default_factory=FloquetJob)
    T_start: float
    T_stop: float
    dT: float
    units: Literal["absolute", "critical"] = "critical"
    strict: bool = True
    cap: int = Field(default=ED_DIM_CAP, ge=1)


# ----------------------------
# Helpers
# ----------------------------
def _schema(name: str) -> dict:
    return json.loads(resources.files(SCHEMA_PACKAGE).joinpath(name).read_text(encoding="utf-8"))


def _validate(schema_name: str, data: Any) -> None:
    v = jsonschema.Draft202012Validator(_schema(schema_name))
    errors = sorted(v.iter_errors(data), key=lambda e: list(e.path))
    if errors:
        first = errors[0]
        where = "/".join(str(p) for p in first.path) or "<root>"
        raise ConfigError(f"{schema_name}: {where}: {first.message}")


def load_job(path: Path) -> JobConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    _validate("job.schema.json", data)
    if isinstance(data.get("model"), dict):
        _validate("model.schema.json", data["model"])
    return JobConfig.model_validate(data)


def _need_model(job: JobConfig) -> ModelSpec:
    if job.model is None:
        raise ConfigError(f"command {job.command} needs a `model` block")
    return job.model


def _pattern(model: ModelSpec, counts: Optional[List[int]]) -> OccupationPattern:
    if counts is None:
        return lowest_pattern(model)
    return OccupationPattern(tuple(counts)).check(model.capacities, model.N)


def _at(model: ModelSpec, g: Optional[float]) -> Tuple[ModelSpec, float]:
    target = coupling_parameter(model) if g is None else float(g)
    return with_coupling(model, target), target


def _indexed(name: str, n: int) -> List[str]:
    return [f"{name}_{i}" for i in range(1, n + 1)]


def _root_rows(model: ModelSpec, roots: BetheRoots) -> List[list]:
    """[index, re, im, |residual|] per rapidity."""
    res = np.abs(bethe_residuals(model, roots.roots)) if roots.N else np.zeros(0)
    return [[a, v.real, v.imag, float(r)] for a, (v, r) in enumerate(zip(roots.roots, res))]


def _critical(job: FloquetJob, units: str, cap: int = ED_DIM_CAP) -> Tuple[float, Optional[float]]:
    """(scale for the period grid, T_c if it was computed)."""
    if units == "absolute":
        return 1.0, None
    Tc = FloquetSystem.build(job.model_copy(update={"basis": "full_ed"}), cap).critical_period
    return Tc, Tc


# ----------------------------
# Commands
# ----------------------------
Handler = Callable[[JobConfig, ArtifactWriter, int], dict]


def cmd_solve(job: JobConfig, out: ArtifactWriter, threads: int) -> dict:
    p = SolveParams.model_validate(job.params)
    model, target = _at(_need_model(job), p.g)
    if p.patterns is None:
        sols = solve_all(model, target, threads=threads)
    else:
        sols = {pat: solve_at(model, pat, target) for pat in (_pattern(model, c) for c in p.patterns)}
    items = sorted(((energy_from_lambda(model, e), pat, e) for pat, e in sols.items()),
                   key=lambda t: t[0])
    out.csv("states.csv", ["pattern", "energy"] + _indexed("lambda", model.L),
            [[pat.label(), E] + list(e.lambdas) for E, pat, e in items])
    if p.with_roots:
        rows = []
        for _, pat, e in items:
            rows.extend([pat.label()] + r for r in _root_rows(model, roots_from_lambda(model, e)))
        out.csv("roots.csv", ["pattern", "index", "re", "im", "residual"], rows)
    return {"g": target, "states": len(items), "ground_energy": items[0][0],
            "ground_pattern": items[0][1].label()}


def cmd_sweep(job: JobConfig, out: ArtifactWriter, threads: int) -> dict:
    p = SweepParams.model_validate(job.params)
    model = _need_model(job)
    pat = _pattern(model, p.pattern)
    opts = SweepOptions(g_start=p.g_start, g_target=coupling_parameter(model) if p.g_target is None else p.g_target,
                        step_init=p.step_init, step_min=p.step_min, taylor_order=p.taylor_order)
    trace = sweep_g(model, pat, opts)
    spin_model = model.extension.kind == "none" and model.kernel in ("rational", "hyperbolic")
    rows = []
    for g, e, it in zip(trace.grid, trace.states, trace.iterations):
        # occupations need the Gaudin spin derivative system; other variants write NaN
        occ = list(occupations(with_coupling(model, g), e)) if spin_model else [float("nan")] * model.L
        rows.append([g] + list(e.lambdas) + occ + [it])
    out.csv("trace.csv", ["g"] + _indexed("lambda", model.L) + _indexed("occ", model.L) + ["newton_iters"], rows)
    final = with_coupling(model, trace.grid[-1])
    return {"pattern": pat.label(), "steps": len(trace.grid), "halvings": len(trace.halvings),
            "g_final": trace.grid[-1], "energy_final": energy_from_lambda(final, trace.final),
            "occupations": spin_model}


def cmd_roots(job: JobConfig, out: ArtifactWriter, threads: int) -> dict:
    p = RootsParams.model_validate(job.params)
    model, target = _at(_need_model(job), p.g)
    pat = _pattern(model, p.pattern)
    if p.route == "direct":
        roots = direct_solve(model, pat, target)
    else:
        roots = roots_from_lambda(model, solve_at(model, pat, target), route=p.route)
    roots = roots.sorted()
    rows = _root_rows(model, roots)
    out.csv("roots.csv", ["index", "re", "im", "residual"], rows)
    return {"pattern": pat.label(), "g": target, "route": p.route, "N": roots.N,
            "max_residual": max((r[3] for r in rows), default=0.0)}


def _evaluate_overlap(model: ModelSpec, pair: OverlapPair, v, w) -> OverlapValue:
    if pair.kind == "detJ":
        return overlap_detJ(model, v, w)
    if pair.kind == "detK":
        return overlap_detK(model, v, w)
    if pair.kind == "slavnov":
        return overlap_slavnov(model, v, w)
    if pair.kind == "norm":
        return norm_gaudin(model, v)
    if pair.kind == "formfactor_sz":
        return formfactor_sz(model, v, w, pair.site)
    rv = roots_from_lambda(model, v) if isinstance(v, EvbVariables) else v
    rw = roots_from_lambda(model, w) if isinstance(w, EvbVariables) else w
    return OverlapValue.from_complex(overlap_dense(model, rv, rw), "dense")


def cmd_overlap(job: JobConfig, out: ArtifactWriter, threads: int) -> dict:
    """One row per (v, w, kind) entry; on-shell states are solved once per pattern."""
    p = OverlapParams.model_validate(job.params)
    model, target = _at(_need_model(job), p.g)
    solved: Dict[OccupationPattern, EvbVariables] = {}

    def state(ref: StateRef) -> Tuple[str, Any]:
        if ref.roots is not None:
            return "explicit", BetheRoots(np.array([complex(a, b) for a, b in ref.roots]))
        pat = _pattern(model, ref.pattern)
        if pat not in solved:
            solved[pat] = solve_at(model, pat, target)
        return pat.label(), solved[pat]

    header = ["pair", "v", "w", "kind", "route", "log_magnitude", "phase_re", "phase_im"]
    header += ["seconds"] if p.timings else []
    rows, zeros = [], 0
    for n, pair in enumerate(p.pairs):
        (lv, v), (lw, w) = state(pair.v), state(pair.w)
        t0 = time.perf_counter()
        x = _evaluate_overlap(model, pair, v, w)
        dt = time.perf_counter() - t0
        zeros += x.log_magnitude == float("-inf")
        row = [n, lv, lw, pair.kind, x.route, x.log_magnitude, x.phase.real, x.phase.imag]
        rows.append(row + [dt] if p.timings else row)
    out.csv("overlaps.csv", header, rows)
    logger.debug("overlap batch: %d pairs, %d states solved", len(rows), len(solved))
    return {"g": target, "pairs": len(rows), "states_solved": len(solved), "exact_zeros": zeros}


def cmd_spectrum_check(job: JobConfig, out: ArtifactWriter, threads: int) -> dict:
    """Every conserved charge of every Bethe state against the ED spectrum of that charge."""
    p = SpectrumCheckParams.model_validate(job.params)
    model, target = _at(_need_model(job), p.g)
    sols = solve_all(model, target, threads=threads)
    basis = sector_basis(model, cap=p.cap)
    q = np.array([charge_eigenvalues(model, e) for e in sols.values()])
    worst, rows = 0.0, []
    for i in range(model.L):
        ed, _ = diagonalize(build_charge(model, i, basis))
        ok, dev = match_spectra(q[:, i], ed, p.tol)
        rows.append([i, dev, ok])
        if not ok:
            raise BackendDisagreementError(f"charge {i}: Bethe and ED spectra differ (max deviation {dev:.3e})")
        worst = max(worst, dev)
    has_h = model.kernel != "trigonometric"
    ed = diagonalize(build_hamiltonian(model, basis))[0] if has_h else np.zeros(0)
    if has_h and model.extension.kind in ("none", "central_spin"):
        energies = [energy_from_lambda(model, e) for e in sols.values()]
        ok, dev = match_spectra(energies, ed, p.tol * max(1.0, float(np.max(np.abs(ed)))))
        if not ok:
            raise BackendDisagreementError(f"energies: Bethe and ED spectra differ (max deviation {dev:.3e})")
        rows.append(["H", dev, ok])
    out.csv("check.csv", ["charge", "max_deviation", "matched"], rows)
    if has_h:
        out.csv("spectra.csv", ["index", "eigenvalue"], [[k, x] for k, x in enumerate(ed)])
    return {"g": target, "states": len(sols), "ed_dim": basis.dim, "max_deviation": worst}


def cmd_readgreen(job: JobConfig, out: ArtifactWriter, threads: int) -> dict:
    p = ReadGreenParams.model_validate(job.params)
    scan = readgreen_scan(p.etas, p.gamma, p.inverse_couplings.points(), threads=threads, cap=p.cap)
    out.csv("scan.csv", scan.header(), scan.rows())
    return {"L": scan.L, "gamma": scan.gamma, "readgreen_points": scan.readgreen_points(),
            "transitions": transition_points(scan), "flagged": int(sum(scan.flagged))}


def cmd_variational(job: JobConfig, out: ArtifactWriter, threads: int) -> dict:
    p = VariationalParams.model_validate(job.params)
    model = _need_model(job)
    seed = OccupationPattern(tuple(p.seed_pattern)) if p.seed_pattern is not None else None
    res = variational_optimize(model, p.perturbations, seed=seed, eigenstate=p.eigenstate, mode=p.mode,
                               g_bounds=p.g_bounds, max_iter=p.max_iter, with_exact=p.with_exact)
    out.csv("trace.csv", ["iteration", "energy"], [[k, E] for k, E in enumerate(res.trace)])
    return res.summary()


def cmd_rgci(job: JobConfig, out: ArtifactWriter, threads: int) -> dict:
    p = RgciParams.model_validate(job.params)
    table = load_pairing_table(p.table)
    run = rgci_run(table, g=p.g, N=p.N, bounds=p.bounds, max_basis=p.max_basis, basis=p.basis)
    out.csv("rgci.csv", ["n", "integrable_energy", "energy", "delta_c"], run.rows())
    summary = {"table": table.name, **run.summary()}
    if table.reference:
        summary["reference"] = dict(table.reference)
    if p.gap_particles:
        gaps = pairing_gap_curve(table, p.gap_particles)
        out.csv("gaps.csv", ["A", "gap"], [[A, d] for A, d in sorted(gaps.items())])
    return summary


def cmd_floquet_ed(job: JobConfig, out: ArtifactWriter, threads: int) -> dict:
    p = FloquetEdParams.model_validate(job.params)
    fj = p.system.model_copy(update={"basis": "full_ed"})
    scale, Tc = _critical(fj, p.units, p.cap)
    periods = p.periods.points(scale)
    spec = floquet_full_ed(fj, periods, p.cap)
    out.csv("spectrum.csv", spec.header(), spec.rows())
    scan = extremal_gap_scan(fj, periods, p.cap)
    out.csv("gap.csv", ["T", "gap"], scan.rows())
    T_min, gap_min = scan.minimum
    return {"critical_period": Tc, "gap_minimum_T": T_min, "gap_minimum": gap_min, "periods": len(periods)}


def cmd_floquet_restricted(job: JobConfig, out: ArtifactWriter, threads: int) -> dict:
    p = FloquetRestrictedParams.model_validate(job.params)
    fj = p.system.model_copy(update={"basis": "restricted"})
    scale, Tc = _critical(fj, p.units)
    periods = p.periods.points(scale)
    R = RestrictedFloquet.build(fj, strict=p.strict)
    rows, defects = [], []
    for T in periods:
        U = R.operator(T)
        for i in range(R.size):
            for j in range(R.size):
                rows.append([T, i, j, U[i, j].real, U[i, j].imag])
        defects.append([T, R.unitarity_defect(T)])
    out.csv("operator.csv", ["T", "i", "j", "re", "im"], rows)
    out.csv("unitarity.csv", ["T", "defect"], defects)
    scan = extremal_gap_scan(fj, periods, restricted=R)
    out.csv("gap.csv", ["T", "gap"], scan.rows())
    T_min, gap_min = scan.minimum
    return {"critical_period": Tc, "patterns": [q.label() for q in R.basis_states.patterns],
            "energies": list(R.basis_states.energies), "deficits": R.deficits,
            "max_unitarity_defect": max(d for _, d in defects),
            "gap_minimum_T": T_min, "gap_minimum": gap_min}


def cmd_floquet_sweep(job: JobConfig, out: ArtifactWriter, threads: int) -> dict:
    p = FloquetSweepParams.model_validate(job.params)
    scale, Tc = _critical(p.system, p.units, p.cap)
    rec = floquet_sweep(p.system, p.T_start * scale, p.T_stop * scale, p.dT * scale,
                        cap=p.cap, strict=p.strict)
    out.csv("sweep.csv", ["T", "h_avg", "sz0"], rec.rows())
    return {"critical_period": Tc, "basis": p.system.basis, "steps": len(rec.periods),
            "h_avg_final": rec.h_avg[-1], "sz0_max": max(rec.sz0), "sz0_min": min(rec.sz0)}


COMMANDS: Dict[str, Handler] = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "roots": cmd_roots,
    "overlap": cmd_overlap,
    "spectrum-check": cmd_spectrum_check,
    "readgreen": cmd_readgreen,
    "variational": cmd_variational,
    "rgci": cmd_rgci,
    "floquet-ed": cmd_floquet_ed,
    "floquet-restricted": cmd_floquet_restricted,
    "floquet-sweep": cmd_floquet_sweep,
}


# ----------------------------
# Entry point
# ----------------------------
def run(config: Path, out: Optional[Path] = None, threads: Optional[int] = None,
        command: Optional[str] = None) -> Path:
    """Validate, execute and commit one job; returns the output directory."""
    job = load_job(config)
    if command is not None and command != job.command:
        raise ConfigError(f"config is a {job.command!r} job, not {command!r}")
    target = out if out is not None else (Path(job.out) if job.out else None)
    if target is None:
        raise ConfigError("no output directory: pass --out or set `out` in the job file")
    n_threads = resolve_threads(threads, job.threads)
    logger.debug("%s: threads=%d out=%s", job.command, n_threads, target)
    with ArtifactWriter(Path(target)) as writer:
        summary = COMMANDS[job.command](job, writer, n_threads)
        writer.json("summary.json", summary)
        writer.commit({"command": job.command, "seed": job.seed, "version": __version__})
    return Path(target)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rgbethe", description="Richardson-Gaudin toolkit")
    ap.add_argument("--version", action="version", version=f"rgbethe {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ["run"] + list(COMMANDS):
        sp = sub.add_parser(name, help="job named by the config" if name == "run" else f"{name} job")
        sp.add_argument("--config", required=True, type=Path, help="job JSON file")
        sp.add_argument("--out", type=Path, default=None, help="output directory (overrides job `out`)")
        sp.add_argument("--threads", type=int, default=None, help="worker threads, 0 = auto")
        sp.add_argument("--verbose", action="store_true")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        path = run(args.config, args.out, args.threads, None if args.command == "run" else args.command)
    except (ConfigError, ValidationError) as exc:
        print(f"[x] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"[x] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # inputs the job schema lets through but a library call rejects
        print(f"[x] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"[ok] {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
