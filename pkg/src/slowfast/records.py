"""Persistence of experiment outputs.

A run directory holds::

    manifest.json   config, config hash, seeds, version, wall clock, file checksums
    summary.jsonl   one JSON object per summary row
    <name>.csv      one file per numeric series (2-D, first column = row index)

Floats are written with ``repr`` so reading returns bit-identical values.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import config_hash

__all__ = ["RunRecord", "CorruptionError", "write_run_record", "read_run_record"]


class CorruptionError(RuntimeError):
    """Stored files do not match their manifest."""


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    seeds: dict
    series: dict = field(default_factory=dict)
    summary: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    version: str = __version__

    def __eq__(self, other):
        # wall-clock time is informational and excluded
        if not isinstance(other, RunRecord):
            return NotImplemented
        if (self.config, self.config_hash, self.seeds, self.summary, self.diagnostics,
                self.version) != (other.config, other.config_hash, other.seeds, other.summary,
                                  other.diagnostics, other.version):
            return False
        if self.series.keys() != other.series.keys():
            return False
        return all(_same_array(self.series[k], other.series[k]) for k in self.series)


def _same_array(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and a.tobytes() == b.tobytes()


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_series(path: Path, arr):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row"] + [f"c{j}" for j in range(arr.shape[1])])
        for i, row in enumerate(arr):
            w.writerow([i] + [repr(float(v)) for v in row])


def _read_series(path: Path, ndim: int):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    arr = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float)
    if ndim == 1:
        arr = arr[:, 0] if arr.size else np.zeros(0)
    return arr


def write_run_record(record: RunRecord, out_dir) -> Path:
    """Write ``record`` into ``out_dir`` (created if needed); returns the directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    shapes = {}
    for name, arr in record.series.items():
        p = out / f"{name}.csv"
        _write_series(p, arr)
        files[p.name] = _sha(p)
        shapes[name] = int(np.asarray(arr).ndim)
    p = out / "summary.jsonl"
    with open(p, "w") as fh:
        for row in record.summary:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    files[p.name] = _sha(p)
    manifest = {"config": record.config, "config_hash": record.config_hash, "seeds": record.seeds,
                "diagnostics": record.diagnostics, "wall_clock": record.wall_clock,
                "version": record.version, "series": shapes, "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out


def read_run_record(path) -> RunRecord:
    """Inverse of :func:`write_run_record`; raises :class:`CorruptionError` on mismatch."""
    path = Path(path)
    if path.is_file():
        path = path.parent
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except json.JSONDecodeError as exc:
        raise CorruptionError(f"unreadable manifest: {exc}") from None
    if config_hash(manifest["config"]) != manifest["config_hash"]:
        raise CorruptionError("config hash does not match the stored config")
    for name, digest in manifest["files"].items():
        p = path / name
        if not p.exists() or _sha(p) != digest:
            raise CorruptionError(f"{name} is missing or does not match its checksum")
    series = {k: _read_series(path / f"{k}.csv", nd) for k, nd in manifest["series"].items()}
    summary = [json.loads(line) for line in (path / "summary.jsonl").read_text().splitlines()
               if line.strip()]
    return RunRecord(manifest["config"], manifest["config_hash"], manifest["seeds"], series,
                     summary, manifest["diagnostics"], manifest["wall_clock"], manifest["version"])
