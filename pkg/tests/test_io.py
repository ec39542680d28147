# tests/test_io.py
import json

import numpy as np
import pytest

from rgbethe.errors import ConfigError
from rgbethe.io import MANIFEST, ArtifactWriter, csv_text, json_text, sha256_file


def test_csv_formatting():
    text = csv_text(["n", "E", "ok"], [[1, 0.5, True], [np.int64(2), np.float64(-1.25), np.bool_(False)]])
    assert text == "n,E,ok\n1,5.000000000000e-01,1\n2,-1.250000000000e+00,0\n"
    with pytest.raises(ValueError):
        csv_text(["a", "b"], [[1]])
    with pytest.raises(TypeError):
        csv_text(["z"], [[1 + 2j]])


def test_json_plain_values():
    data = json.loads(json_text({"z": 1 - 2j, "v": np.arange(3), 3: np.float32(0.5)}))
    assert data == {"z": {"re": 1.0, "im": -2.0}, "v": [0, 1, 2], "3": 0.5}


def test_commit_writes_manifest(tmp_path):
    out = tmp_path / "run"
    with ArtifactWriter(out) as w:
        w.csv("states.csv", ["n"], [[1], [2]])
        w.json("summary.json", {"ok": True})
        w.commit({"command": "solve"})
    man = json.loads((out / MANIFEST).read_text())
    assert man["command"] == "solve"
    assert [e["name"] for e in man["files"]] == ["states.csv", "summary.json"]
    for e in man["files"]:
        assert e["sha256"] == sha256_file(out / e["name"])
    assert not list(tmp_path.glob(".run.staging-*"))


def test_bad_names(tmp_path):
    w = ArtifactWriter(tmp_path / "x")
    w.json("a.json", {})
    for name in ("a.json", "sub/b.json", MANIFEST, ".."):
        with pytest.raises(ValueError):
            w.json(name, {})
    w.discard()


def test_failure_leaves_nothing(tmp_path):
    out = tmp_path / "run"
    with pytest.raises(RuntimeError):
        with ArtifactWriter(out) as w:
            w.csv("a.csv", ["x"], [[1.0]])
            raise RuntimeError("boom")
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []


def test_commit_replaces_earlier_run(tmp_path):
    out = tmp_path / "run"
    first = ArtifactWriter(out)
    first.csv("a.csv", ["x"], [[0]])
    first.csv("stale.csv", ["x"], [[0]])
    first.commit()
    w = ArtifactWriter(out)
    w.csv("a.csv", ["x"], [[1]])
    w.commit()
    assert (out / "a.csv").read_text() == "x\n1\n"
    assert sorted(p.name for p in out.iterdir()) == ["a.csv", MANIFEST]
    assert not list(tmp_path.glob(".run.staging-*"))
    assert not list(tmp_path.glob(".run.old-*"))


def test_commit_into_empty_directory(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    w = ArtifactWriter(out)
    w.json("s.json", {})
    w.commit()
    assert sorted(p.name for p in out.iterdir()) == [MANIFEST, "s.json"]


@pytest.mark.parametrize("as_file", [True, False], ids=["plain-file", "foreign-directory"])
def test_commit_refuses_foreign_target(tmp_path, as_file):
    out = tmp_path / "run"
    if as_file:
        out.write_text("mine\n")
    else:
        out.mkdir()
        (out / "notes.txt").write_text("mine\n")
    w = ArtifactWriter(out)
    w.csv("a.csv", ["x"], [[1]])
    with pytest.raises(ConfigError):
        w.commit()
    assert (out if as_file else out / "notes.txt").read_text() == "mine\n"
    assert not list(tmp_path.glob(".run.staging-*"))
