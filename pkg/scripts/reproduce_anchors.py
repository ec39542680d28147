#!/usr/bin/env python3
# scripts/reproduce_anchors.py
# Reference-value runs for the application pipelines; prints [ok]/[x] per check, exit 2 on any [x].
from __future__ import annotations

import argparse
import sys

import numpy as np

from rgbethe.apps.floquet import FloquetJob, FloquetSystem, extremal_gap_scan, floquet_sweep
from rgbethe.apps.readgreen import readgreen_scan, scan_point, transition_points
from rgbethe.apps.rgci import load_pairing_table, rgci_run
from rgbethe.apps.variational import Perturbation, variational_optimize
from rgbethe.equations import bethe_residuals, evb_residuals
from rgbethe.errors import SingularPointError
from rgbethe.rapidities import direct_solve, roots_from_lambda
from rgbethe.schema import CentralSpinExtension, ModelSpec, readgreen_inverse_coupling
from rgbethe.solver import SweepOptions, lowest_pattern, sweep_g

FAILED = []


def check(cond, msg):
    if cond:
        print(f"[ok] {msg}")
    else:
        print(f"[x] {msg}", file=sys.stderr)
        FAILED.append(msg)


def readgreen(threads: int):
    L, gamma = 12, 1e-2
    etas = [float(k) for k in range(1, L + 1)]
    points = [readgreen_inverse_coupling(L, n) for n in range(L // 2)]
    grid = sorted({round(p + d, 6) for p in points for d in np.arange(-0.2, 0.2001, 0.02)})
    scan = readgreen_scan(etas, gamma, grid, threads=threads)
    found = transition_points(scan)
    for p in points:
        near = [x for x in found if abs(x - p) <= 0.05]
        check(bool(near), f"Read-Green: <N> step within 0.05 of G^-1={p:g} (found {found})")
    for p in points:
        closed = scan_point(etas, 0.0, p)["gap"]
        opened = scan_point(etas, gamma, p)["gap"]
        check(closed < 1e-9, f"Read-Green: gamma=0 gap at G^-1={p:g} is {closed:.2e}")
        check(opened > 1e-4, f"Read-Green: gamma=1e-2 gap at G^-1={p:g} is {opened:.2e}")


def variational():
    L = 12
    model = ModelSpec(levels=[float(L - i) for i in range(1, L + 1)], g=-2.0, N=L // 2,
                      extension=CentralSpinExtension(index=0, B_z=1.0))
    res = variational_optimize(model, [Perturbation(kind="sz", sites=[1], strength=-1.0)])
    check(abs(res.overlap_pt0 - 0.775) <= 0.005, f"variational: unperturbed overlap {res.overlap_pt0:.4f} (0.7754)")
    check(res.overlap_var >= 0.985, f"variational: optimized overlap {res.overlap_var:.4f} (0.9908)")
    for mu in np.linspace(-1.0, 1.0, 9):
        r = variational_optimize(model, [Perturbation(kind="sz", sites=[1], strength=float(mu))], with_exact=False)
        check(r.energy <= r.energy_pt1 + 1e-10, f"variational: mu={mu:+.2f} E_var={r.energy:.6f} <= PT1={r.energy_pt1:.6f}")


def rgci():
    table = load_pairing_table("sn116")
    run = rgci_run(table)
    check(abs(run.g + 0.211) <= 0.002, f"RGCI Sn: g0 = {run.g:.4f} MeV (-0.211)")
    check(abs(run.variational_energy + 95.907) <= 0.005, f"RGCI Sn: E[g0] = {run.variational_energy:.4f} MeV (-95.907)")
    check(abs(run.delta_c[0] - 0.0093) <= 0.0005, f"RGCI Sn: delta_c(1) = {100 * run.delta_c[0]:.3f}% (0.93%)")
    check(run.dim == 110 and abs(run.delta_c[-1]) < 1e-10, f"RGCI Sn: complete basis at dim {run.dim}")
    flat = rgci_run(table, g=0.0)
    n0, n1 = flat.basis_size_for(0.01), run.basis_size_for(0.01)
    check(n0 > 3 * n1, f"RGCI Sn: states for 1% at g=0 ({n0}) vs g0 ({n1})")


def floquet():
    job = FloquetJob()
    sys_ = FloquetSystem.build(job)
    Tc, W = sys_.critical_period, sys_.bandwidth
    scan = extremal_gap_scan(job, np.linspace(0.9 * Tc, 1.1 * Tc, 401))
    T_min, _ = scan.minimum
    check(abs(T_min - Tc) <= 0.01 * Tc, f"Floquet: first extremal crossing at {T_min:.5f}, T_c={Tc:.5f}")

    rec = floquet_sweep(job, 1.8 * Tc, 2.2 * Tc, 1e-4)
    top = float(sys_.E_avg[-1])
    check(abs(rec.h_avg[-1] - top) <= 0.02 * W, f"Floquet: 2T_c sweep ends at <H_avg>={rec.h_avg[-1]:.4f}, top={top:.4f}")
    check(max(rec.sz0) > 0.45, f"Floquet: peak <S0z> along 2T_c sweep {max(rec.sz0):.4f}")

    first = floquet_sweep(job, 0.8 * Tc, 1.2 * Tc, 1e-4)
    k = int(np.argmin(np.abs(np.asarray(first.periods) - T_min)))
    check(abs(first.sz0[k]) < 0.05, f"Floquet: <S0z> at first resonance {first.sz0[k]:+.4f}")

    grid = np.linspace(1.9 * Tc, 2.1 * Tc, 401)
    _, ed_gap = extremal_gap_scan(job, grid).minimum
    restricted = job.model_copy(update={"basis": "restricted"})
    _, rs_gap = extremal_gap_scan(restricted, grid).minimum
    check(abs(rs_gap - ed_gap) <= 0.1 * ed_gap, f"Floquet: restricted 2T_c gap {rs_gap:.3e} vs ED {ed_gap:.3e}")


def singular():
    L = 24
    model = ModelSpec(levels=[float(i) for i in range(1, L + 1)], g=-1.5, N=L // 2)
    pat = lowest_pattern(model)
    trace = sweep_g(model, pat, SweepOptions(g_target=-1.5))
    worst = float(np.max(np.abs(evb_residuals(model, trace.final))))
    check(worst < 1e-10, f"singular: EVB sweep to g=-1.5 at L={L}, residual {worst:.2e}")
    roots = roots_from_lambda(model, trace.final)
    worst = float(np.max(np.abs(bethe_residuals(model, roots))))
    check(worst < 1e-8, f"singular: rapidities from the EVB state, residual {worst:.2e}")
    try:
        direct_solve(model, pat, -1.5)
        check(False, "singular: direct rapidity continuation should stop where roots merge")
    except SingularPointError as exc:
        check(True, f"singular: direct rapidity continuation stops at g={exc.g_blocking:.4f}")


ANCHORS = {"readgreen": readgreen, "variational": variational, "rgci": rgci, "floquet": floquet,
           "singular": singular}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*", help=f"subset of {sorted(ANCHORS)}")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    unknown = [n for n in args.names if n not in ANCHORS]
    if unknown:
        ap.error(f"unknown anchors {unknown}")
    for name in args.names or list(ANCHORS):
        print(f"[info] {name}")
        if name == "readgreen":
            readgreen(args.threads)
        else:
            ANCHORS[name]()
    if FAILED:
        print(f"[x] {len(FAILED)} check(s) failed", file=sys.stderr)
        return 2
    print("[ok] all anchors reproduced")
    return 0


if __name__ == "__main__":
    sys.exit(main())
