"""Run persistence: canonical configs, run records, and run directories.

Configs serialize through canonical JSON (sorted keys, shortest round-trip
floats) so that a load/dump cycle is byte-identical; every run directory gets
a RunRecord whose manifest digests make tampering and partial writes
detectable ('verify --integrity').
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .errors import ConfigError

__all__ = ["canonical_json", "write_json", "read_json", "RunRecord",
           "create_run_dir", "write_record", "verify_integrity"]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_json(path, obj) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(canonical_json(obj))


def read_json(path):
    with open(path) as f:
        return json.load(f)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def create_run_dir(output_dir, kind: str, name: str | None = None) -> Path:
    """Fresh timestamped run directory; an existing target is an error."""
    base = Path(output_dir)
    base.mkdir(parents=True, exist_ok=True)
    if name is None:
        stamp = time.strftime("%Y%m%d-%H%M%S") + f"-{int((time.time() % 1) * 1e6):06d}"
        name = f"{kind}-{stamp}"
    run_dir = base / name
    try:
        run_dir.mkdir(parents=False, exist_ok=False)
    except FileExistsError:
        raise ConfigError(f"run directory already exists: {run_dir}")
    return run_dir


@dataclass
class RunRecord:
    kind: str
    config: dict
    started: float = field(default_factory=time.time)
    finished: float | None = None
    manifest: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "tool_version": __version__,
            "started": self.started,
            "finished": self.finished,
            "manifest": self.manifest,
        }


def write_record(run_dir: Path, record: RunRecord) -> None:
    """Finalize the record: digest every data file, then write meta.json."""
    record.finished = time.time()
    manifest = {}
    for path in sorted(run_dir.rglob("*")):
        if path.is_file() and path.name != "meta.json":
            manifest[str(path.relative_to(run_dir))] = sha256_file(path)
    record.manifest = manifest
    write_json(run_dir / "meta.json", record.as_dict())


def verify_integrity(run_dir) -> list[str]:
    """Return a list of integrity problems (empty = all digests match)."""
    run_dir = Path(run_dir)
    meta_path = run_dir / "meta.json"
    if not meta_path.exists():
        return [f"missing meta.json in {run_dir}"]
    meta = read_json(meta_path)
    problems = []
    manifest = meta.get("manifest", {})
    for rel, digest in manifest.items():
        path = run_dir / rel
        if not path.exists():
            problems.append(f"missing file {rel}")
        elif sha256_file(path) != digest:
            problems.append(f"digest mismatch for {rel}")
    for path in sorted(run_dir.rglob("*")):
        if path.is_file() and path.name != "meta.json":
            rel = str(path.relative_to(run_dir))
            if rel not in manifest:
                problems.append(f"file not in manifest: {rel}")
    return problems
