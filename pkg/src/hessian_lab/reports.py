"""Deterministic CSV/JSON emission and run-report assembly.

CSV is RFC-4180 with a header row and '.' decimals; floats print through a
fixed 17-significant-digit format so identical runs are byte-identical.
JSON summaries sort keys.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["fmt", "write_csv", "write_json", "content_hash", "RunReport"]


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def _sanitize(obj):
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(_sanitize(obj), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return path


def content_hash(data: bytes) -> str:
    """Hash in blob style so identical inputs are recognizable at a glance."""
    header = f"blob {len(data)}\0".encode()
    return hashlib.sha1(header + data).hexdigest()


@dataclass
class RunReport:
    command: str
    config_echo: dict
    input_hash: str
    seed: int
    results: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    passed: bool = True

    def add_artifact(self, path) -> None:
        self.artifacts.append(str(path))

    def time_block(self, name: str):
        report = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()
                return self

            def __exit__(self, *exc):
                report.timings[name] = time.perf_counter() - self.t0
                return False

        return _Timer()

    def save(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        missing = [p for p in self.artifacts if not Path(p).exists()]
        if missing:
            raise RuntimeError(f"report references unwritten files: {missing}")
        return write_json(
            out_dir / "report.json",
            {
                "command": self.command,
                "config": self.config_echo,
                "input_hash": self.input_hash,
                "seed": self.seed,
                "results": self.results,
                "artifacts": self.artifacts,
                "timings_s": self.timings,
                "pass": self.passed,
            },
        )
