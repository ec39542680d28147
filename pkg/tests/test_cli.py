# tests/test_cli.py
import csv
import json
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from rgbethe.cli import COMMANDS, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, Grid, load_job, main
from rgbethe.errors import ConfigError
from rgbethe.io import sha256_file

PICKET = {"levels": [1.0, 2.0, 3.0, 4.0], "g": -0.5, "N": 2}


def _job(tmp_path, **body):
    p = tmp_path / "job.json"
    p.write_text(json.dumps(body))
    return str(p)


def _only_config_left(tmp_path):
    return [x.name for x in tmp_path.iterdir()] == ["job.json"]


def test_solve_writes_artifacts(tmp_path):
    cfg = _job(tmp_path, command="solve", model=PICKET, seed=7)
    out = tmp_path / "out"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["states"] == 6
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "solve" and man["seed"] == 7
    for e in man["files"]:
        assert e["sha256"] == sha256_file(out / e["name"])
    assert (out / "states.csv").read_text().count("\n") == 7


def test_run_dispatches_on_config(tmp_path):
    cfg = _job(tmp_path, command="readgreen",
               params={"L": 4, "inverse_couplings": {"values": [3.5, 2.5, 1.5]}})
    out = tmp_path / "rg"
    assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert (out / "scan.csv").exists()


@pytest.mark.parametrize("body,sub", [
    ({"command": "bogus", "model": PICKET}, "run"),
    ({"command": "solve"}, "run"),
    ({"command": "solve", "model": PICKET}, "sweep"),
    ({"command": "solve", "model": PICKET, "params": {"bogus": 1}}, "solve"),
], ids=["unknown-command", "missing-model", "wrong-subcommand", "bad-params"])
def test_config_errors_leave_no_output(tmp_path, body, sub):
    cfg = _job(tmp_path, **body)
    assert main([sub, "--config", cfg, "--out", str(tmp_path / "out")]) == EXIT_CONFIG
    assert _only_config_left(tmp_path)


def test_spectrum_check_disagreement_exit(tmp_path):
    cfg = _job(tmp_path, command="spectrum-check", model=PICKET, params={"tol": 1e-300})
    assert main(["spectrum-check", "--config", cfg, "--out", str(tmp_path / "out")]) == EXIT_NUMERICAL
    assert _only_config_left(tmp_path)


def test_spectrum_check_passes(tmp_path):
    cfg = _job(tmp_path, command="spectrum-check", model=PICKET)
    out = tmp_path / "out"
    assert main(["spectrum-check", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "summary.json").read_text())["ed_dim"] == 6


def test_grid():
    assert Grid(start=0.0, stop=1.0, num=3).points(2.0) == [0.0, 1.0, 2.0]
    assert Grid(values=[0.5]).points() == [0.5]
    with pytest.raises(ValidationError):
        Grid()
    with pytest.raises(ValidationError):
        Grid(values=[1.0], start=0.0, stop=1.0, num=2)


def test_load_job_rejects_bad_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_job(p)
    with pytest.raises(ConfigError):
        load_job(tmp_path / "missing.json")


def _rows(path):
    with path.open(newline="") as f:
        return list(csv.DictReader(f))


def test_solve_matches_golden_spectrum(tmp_path):
    golden = json.loads((Path(__file__).parent / "golden" / "solve_l4.json").read_text())
    cfg = _job(tmp_path, command="solve", model=golden["model"], params={"with_roots": True})
    out = tmp_path / "out"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = _rows(out / "states.csv")
    assert len(rows) == golden["states"]
    assert list(rows[0]) == ["pattern", "energy", "lambda_1", "lambda_2", "lambda_3", "lambda_4"]
    energies = np.array([float(r["energy"]) for r in rows])
    expected = np.sort(np.roots(golden["charpoly_shifted"]).real) + golden["energy_offset"]
    assert np.allclose(energies, expected, atol=1e-8)
    assert energies.sum() == pytest.approx(golden["energy_sum"], abs=1e-8)
    eps = np.array(golden["model"]["levels"])
    w = golden["weighted_lambda_sum"]
    for r, E in zip(rows, energies):
        lam = np.array([float(r[f"lambda_{i}"]) for i in range(1, 5)])
        assert lam.sum() == pytest.approx(golden["lambda_sum"], abs=1e-8)
        assert eps @ lam == pytest.approx(w["constant"] + w["per_energy"] * E, abs=1e-7)
    roots = _rows(out / "roots.csv")
    assert list(roots[0]) == ["pattern", "index", "re", "im", "residual"]
    assert len(roots) == golden["states"] * golden["model"]["N"]
    assert max(float(r["residual"]) for r in roots) < 1e-8


def test_spectrum_check_writes_ed_spectrum(tmp_path):
    golden = json.loads((Path(__file__).parent / "golden" / "solve_l4.json").read_text())
    cfg = _job(tmp_path, command="spectrum-check", model=golden["model"])
    out = tmp_path / "out"
    assert main(["spectrum-check", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = _rows(out / "spectra.csv")
    assert [int(r["index"]) for r in rows] == list(range(golden["states"]))
    ed = np.sort([float(r["eigenvalue"]) for r in rows])
    expected = np.sort(np.roots(golden["charpoly_shifted"]).real) + golden["energy_offset"]
    assert np.allclose(ed, expected, atol=1e-8)


def test_roots_writes_residuals(tmp_path):
    cfg = _job(tmp_path, command="roots", model=PICKET, params={"pattern": [1, 0, 1, 0]})
    out = tmp_path / "out"
    assert main(["roots", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = _rows(out / "roots.csv")
    assert list(rows[0]) == ["index", "re", "im", "residual"]
    assert len(rows) == 2
    summary = json.loads((out / "summary.json").read_text())
    assert summary["max_residual"] == pytest.approx(max(float(r["residual"]) for r in rows), rel=1e-9)
    assert summary["max_residual"] < 1e-8


def test_sweep_trace_columns(tmp_path):
    cfg = _job(tmp_path, command="sweep", model=PICKET)
    out = tmp_path / "out"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = _rows(out / "trace.csv")
    assert list(rows[0]) == (["g"] + [f"lambda_{i}" for i in range(1, 5)]
                             + [f"occ_{i}" for i in range(1, 5)] + ["newton_iters"])
    assert float(rows[-1]["g"]) == pytest.approx(-0.5)
    for r in rows:
        # ⟨S^z⟩ summed over levels is N - L/2 = 0
        assert sum(float(r[f"occ_{i}"]) for i in range(1, 5)) == pytest.approx(0.0, abs=1e-6)
        assert int(r["newton_iters"]) >= 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["occupations"] is True and summary["steps"] == len(rows)


def _overlap_job(tmp_path, pairs, **params):
    return _job(tmp_path, command="overlap", model=PICKET, params={"pairs": pairs, **params})


def test_overlap_batch(tmp_path):
    pairs = [
        {"kind": "detJ"},
        {"kind": "norm"},
        {"kind": "dense"},
        {"kind": "detJ", "w": {"roots": [[0.5, 0.0], [2.5, 0.0]]}},
        {"kind": "dense", "w": {"roots": [[0.5, 0.0], [2.5, 0.0]]}},
        {"kind": "formfactor_sz", "w": {"pattern": [1, 0, 1, 0]}, "site": 0},
    ]
    cfg = _overlap_job(tmp_path, pairs)
    out = tmp_path / "out"
    assert main(["overlap", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = _rows(out / "overlaps.csv")
    assert list(rows[0]) == ["pair", "v", "w", "kind", "route", "log_magnitude", "phase_re", "phase_im", "seconds"]
    assert [r["kind"] for r in rows] == [p["kind"] for p in pairs]
    assert rows[3]["w"] == "explicit" and rows[0]["v"] == "1100"
    logs = [float(r["log_magnitude"]) for r in rows]
    assert logs[0] == pytest.approx(logs[1], abs=1e-8)
    assert logs[0] == pytest.approx(logs[2], abs=1e-8)
    assert logs[3] == pytest.approx(logs[4], abs=1e-8)
    assert float(rows[3]["phase_re"]) == pytest.approx(float(rows[4]["phase_re"]), abs=1e-8)
    assert all(float(r["seconds"]) >= 0.0 for r in rows)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["pairs"] == 6 and summary["states_solved"] == 2


def test_overlap_without_timings_is_reproducible(tmp_path):
    cfg = _overlap_job(tmp_path, [{"kind": "detK"}, {"kind": "slavnov"}], timings=False)
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["overlap", "--config", cfg, "--out", str(first)]) == EXIT_OK
    assert main(["overlap", "--config", cfg, "--out", str(second)]) == EXIT_OK
    text = (first / "overlaps.csv").read_text()
    assert text.splitlines()[0] == "pair,v,w,kind,route,log_magnitude,phase_re,phase_im"
    assert text == (second / "overlaps.csv").read_text()


@pytest.mark.parametrize("pairs", [
    [{"kind": "formfactor_sz", "site": 7}],
    [{"kind": "formfactor_sz"}],
    [{"kind": "detJ", "site": 0}],
    [],
], ids=["site-out-of-range", "site-missing", "site-unexpected", "no-pairs"])
def test_overlap_config_errors(tmp_path, pairs):
    cfg = _overlap_job(tmp_path, pairs)
    assert main(["overlap", "--config", cfg, "--out", str(tmp_path / "out")]) == EXIT_CONFIG
    assert _only_config_left(tmp_path)


@pytest.mark.parametrize("exc,code", [
    (ValueError("stray"), EXIT_CONFIG),
    (np.linalg.LinAlgError("Singular matrix"), EXIT_NUMERICAL),
    (ZeroDivisionError("float division by zero"), EXIT_NUMERICAL),
], ids=["value-error", "linalg-error", "zero-division"])
def test_stray_library_errors_map_to_exit_codes(tmp_path, monkeypatch, exc, code):
    def boom(job, out, threads):
        out.csv("partial.csv", ["x"], [[1]])
        raise exc

    monkeypatch.setitem(COMMANDS, "solve", boom)
    cfg = _job(tmp_path, command="solve", model=PICKET)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "out")]) == code
    assert _only_config_left(tmp_path)


def test_rerun_replaces_earlier_output(tmp_path):
    out = tmp_path / "out"
    cfg = _job(tmp_path, command="solve", model=PICKET, params={"with_roots": True})
    assert main(["solve", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert (out / "roots.csv").exists()
    cfg = _job(tmp_path, command="solve", model=PICKET)
    assert main(["solve", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert not (out / "roots.csv").exists()
    names = {e["name"] for e in json.loads((out / "manifest.json").read_text())["files"]}
    assert names == {p.name for p in out.iterdir()} - {"manifest.json"}


def test_refuses_foreign_output_directory(tmp_path):
    cfg = _job(tmp_path, command="solve", model=PICKET)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert _only_config_left(tmp_path)
