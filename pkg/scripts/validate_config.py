#!/usr/bin/env python3
# scripts/validate_config.py
# Check job files against the packaged schemas, or an output directory against its manifest.
import json, sys, pathlib

from pydantic import ValidationError

from rgbethe.cli import load_job
from rgbethe.errors import ConfigError
from rgbethe.io import MANIFEST, sha256_file


def must(cond, msg):
    if not cond:
        print(f"[x] {msg}", file=sys.stderr); sys.exit(2)


def check_job(p: pathlib.Path):
    try:
        job = load_job(p)
    except (ConfigError, ValidationError) as exc:
        must(False, f"{p}: {exc}")
    print(f"[ok] {p}: {job.command} job valid")


def check_outputs(d: pathlib.Path):
    man = d / MANIFEST
    must(man.is_file(), f"{d}: no {MANIFEST}")
    data = json.loads(man.read_text())
    files = data.get("files") or []
    must(files, f"{man}: empty file list")
    for entry in files:
        f = d / entry["name"]
        must(f.is_file(), f"{f}: listed but missing")
        have = sha256_file(f)
        must(have == entry["sha256"], f"{f}: checksum {have} != manifest {entry['sha256']}")
        must(f.stat().st_size == entry["bytes"], f"{f}: size differs from manifest")
    print(f"[ok] {d}: {len(files)} files match {MANIFEST}")


def main():
    must(len(sys.argv) > 1, "usage: validate_config.py <job.json | output dir> ...")
    for arg in sys.argv[1:]:
        p = pathlib.Path(arg)
        if p.is_dir():
            check_outputs(p)
        else:
            check_job(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
