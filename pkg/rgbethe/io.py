# rgbethe/io.py
from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from rgbethe.errors import ConfigError

logger = logging.getLogger(__name__)

FLOAT_FMT = "%.12e"
MANIFEST = "manifest.json"


def sha256_file(p: Path) -> str:
    h = hashlib.sha256()
    with p.open("rb") as f:
        for chunk in iter(lambda: f.read(8192), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def _atomic_text(path: Path, text: str) -> None:
    tmp = tempfile.NamedTemporaryFile("w", delete=False, dir=str(path.parent),
                                      encoding="utf-8", newline="\n")
    try:
        tmp.write(text)
        tmp.flush(); os.fsync(tmp.fileno()); tmp.close()
        os.replace(tmp.name, path)
    except BaseException:
        tmp.close()
        Path(tmp.name).unlink(missing_ok=True)
        raise


def _cell(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return FLOAT_FMT % float(x)
    if isinstance(x, (complex, np.complexfloating)):
        raise TypeError(f"complex value {x!r} in a CSV row; split it into real and imaginary columns")
    return str(x)


def csv_text(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    lines = [",".join(header)]
    for r in rows:
        if len(r) != len(header):
            raise ValueError(f"row has {len(r)} cells, header has {len(header)}")
        lines.append(",".join(_cell(x) for x in r))
    return "\n".join(lines) + "\n"


def _plain(obj: Any) -> Any:
    """numpy scalars/arrays and complex numbers to JSON-able values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    return obj


def json_text(data: Any) -> str:
    return json.dumps(_plain(data), indent=2, sort_keys=True) + "\n"


def _replaceable(d: Path) -> bool:
    """Empty, or holding a manifest written by an earlier commit."""
    return (d / MANIFEST).is_file() or not any(d.iterdir())


class ArtifactWriter:
    """
    Collects a job's outputs in a staging directory next to `out_dir`; `commit`
    writes manifest.json and moves the staging directory into place. Nothing
    appears under `out_dir` unless the whole job succeeded.
    """

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.out_dir.parent.mkdir(parents=True, exist_ok=True)
        self.staging = Path(tempfile.mkdtemp(prefix=f".{self.out_dir.name}.staging-",
                                             dir=str(self.out_dir.parent)))
        self.files: List[str] = []

    def _path(self, name: str) -> Path:
        if "/" in name or name in ("", ".", "..", MANIFEST):
            raise ValueError(f"artifact name {name!r} is not a plain file name")
        if name in self.files:
            raise ValueError(f"artifact {name!r} written twice")
        self.files.append(name)
        return self.staging / name

    def csv(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
        _atomic_text(self._path(name), csv_text(header, rows))

    def json(self, name: str, data: Any) -> None:
        _atomic_text(self._path(name), json_text(data))

    def manifest(self, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        entries = []
        for name in sorted(self.files):
            p = self.staging / name
            entries.append({"name": name, "sha256": sha256_file(p), "bytes": p.stat().st_size})
        out: Dict[str, Any] = {"files": entries}
        if extra:
            out.update(extra)
        return out

    def commit(self, extra: Optional[Dict[str, Any]] = None) -> Path:
        _atomic_text(self.staging / MANIFEST, json_text(self.manifest(extra)))
        if self.out_dir.exists():
            if not self.out_dir.is_dir() or not _replaceable(self.out_dir):
                self.discard()
                raise ConfigError(f"{self.out_dir} exists and is not an earlier run's output directory")
            # earlier run is swapped out whole
            old = Path(tempfile.mkdtemp(prefix=f".{self.out_dir.name}.old-", dir=str(self.out_dir.parent)))
            os.replace(self.out_dir, old / self.out_dir.name)
            os.replace(self.staging, self.out_dir)
            shutil.rmtree(old, ignore_errors=True)
            logger.info("replaced earlier run in %s", self.out_dir)
        else:
            os.replace(self.staging, self.out_dir)
        logger.debug("committed %d artifacts to %s", len(self.files), self.out_dir)
        return self.out_dir

    def discard(self) -> None:
        shutil.rmtree(self.staging, ignore_errors=True)

    def __enter__(self) -> "ArtifactWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is not None:
            self.discard()
