"""Run directories: locked, restartable, with a checksummed manifest written last.

A run lives in ``<out>/<run_id>/``. A directory without ``manifest.json``
is an interrupted run; starting the same run again wipes it first.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import shutil
from datetime import datetime, timezone
from pathlib import Path

from filelock import FileLock

from .. import __version__
from ..rng import GENERATOR_NAME
from .config import ExperimentConfig

MANIFEST = "manifest.json"


def code_version() -> str:
    return f"gaussperc {__version__}"


def run_id(config: ExperimentConfig) -> str:
    h = hashlib.sha256()
    h.update(config.to_json().encode("utf-8"))
    h.update(code_version().encode("utf-8"))
    return h.hexdigest()[:16]


def format_value(v) -> str:
    """CSV cell text: shortest round-trip floats, ``inf`` for infinities."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, float):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return repr(v)
    if hasattr(v, "item"):  # numpy scalar
        return format_value(v.item())
    return str(v)


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class CsvStream:
    """Header-first CSV writer that flushes each row."""

    def __init__(self, path: Path, columns):
        self.path = path
        self.columns = list(columns)
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\r\n")
        self._w.writerow(self.columns)
        self._fh.flush()

    def write(self, row: dict) -> None:
        missing = [c for c in self.columns if c not in row]
        if missing:
            raise KeyError(f"row lacks columns {missing}")
        self._w.writerow([format_value(row[c]) for c in self.columns])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_csv(path: Path, columns, rows) -> Path:
    with CsvStream(Path(path), columns) as s:
        for r in rows:
            s.write(r)
    return Path(path)


def _json_default(o):
    if hasattr(o, "item"):
        return o.item()
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats with their string form, as JSON has no literal for them."""
    if isinstance(o, float) and not math.isfinite(o):
        return "inf" if o > 0 else ("-inf" if o < 0 else "nan")
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if hasattr(o, "item") and not hasattr(o, "__len__"):
        return _clean(o.item())
    return o


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, default=_json_default, allow_nan=False) + "\n"


class ResultStore:
    def __init__(self, config: ExperimentConfig, out: str | Path | None = None):
        self.config = config
        self.run_id = run_id(config)
        self.root = Path(out if out is not None else config.out)
        self.path = self.root / self.run_id
        self.artifacts: list[str] = []
        self.started: str | None = None
        self._lock = FileLock(str(self.root / f"{self.run_id}.lock"))

    def __enter__(self):
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock.acquire()
        try:
            if self.path.exists():
                shutil.rmtree(self.path)
            self.path.mkdir(parents=True)
        except BaseException:
            self._lock.release()
            raise
        self.started = datetime.now(timezone.utc).isoformat()
        return self

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self.finalize()
        finally:
            self._lock.release()

    def register(self, name: str) -> Path:
        if name in self.artifacts:
            raise ValueError(f"artifact {name} written twice")
        self.artifacts.append(name)
        return self.path / name

    def csv(self, name: str, columns) -> CsvStream:
        return CsvStream(self.register(name), columns)

    def write_json(self, name: str, obj) -> Path:
        p = self.register(name)
        p.write_text(dump_json(obj), encoding="utf-8")
        return p

    def write_bytes(self, name: str, data: bytes) -> Path:
        p = self.register(name)
        p.write_bytes(data)
        return p

    def adopt(self, name: str) -> Path:
        """Register a file some other writer already placed in the run directory."""
        p = self.register(name)
        if not p.exists():
            raise FileNotFoundError(p)
        return p

    def finalize(self) -> Path:
        manifest = {
            "run_id": self.run_id,
            "config": self.config.to_dict(),
            "code_version": code_version(),
            "rng": GENERATOR_NAME,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "artifacts": [{"path": a, "sha256": sha256_file(self.path / a)} for a in self.artifacts],
        }
        p = self.path / MANIFEST
        tmp = p.with_suffix(".tmp")
        tmp.write_text(dump_json(manifest), encoding="utf-8")
        tmp.replace(p)
        return p


def is_complete(path) -> bool:
    return (Path(path) / MANIFEST).exists()
