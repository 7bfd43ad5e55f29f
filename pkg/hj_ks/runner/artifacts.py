"""CSV series and the JSON run manifest."""

import csv
import hashlib
import json
import logging
import os
import platform
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

logger = logging.getLogger('hj_ks')

MANIFEST_NAME = "manifest.json"


def format_value(value: Any) -> str:
    """Locale-free text: floats round-trip through '.17g', None is empty."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _json_default(value: Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


@dataclass
class FileRecord:
    path: str
    sha256: str
    bytes: int


@dataclass
class RunManifest:
    config: Dict[str, Any]
    version: str
    status: str = "ok"
    wall_time: float = 0.0
    estimates: Dict[str, Any] = field(default_factory=dict)
    events: Dict[str, Any] = field(default_factory=dict)
    files: List[FileRecord] = field(default_factory=list)
    error: Optional[str] = None
    python: str = field(default_factory=platform.python_version)
    numpy: str = np.__version__

    @property
    def exit_code(self) -> int:
        return {"ok": 0, "config-error": 2, "partial": 3}.get(self.status, 1)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, out_dir: str) -> str:
        path = os.path.join(out_dir, MANIFEST_NAME)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, default=_json_default)
        logger.info(f"Manifest written to {path} (status {self.status})")
        return path


class ArtifactWriter:
    """Writes a run's files into one directory and keeps their inventory."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.files: List[FileRecord] = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def record(self, name: str) -> FileRecord:
        full = self.path(name)
        entry = FileRecord(name, sha256_file(full), os.path.getsize(full))
        self.files = [f for f in self.files if f.path != name] + [entry]
        return entry

    def write_csv(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> FileRecord:
        with open(self.path(name), "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            count = 0
            for row in rows:
                writer.writerow([format_value(v) for v in row])
                count += 1
        logger.debug(f"Wrote {count} rows to {name}")
        return self.record(name)

    def write_json(self, name: str, payload: Any) -> FileRecord:
        with open(self.path(name), "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, default=_json_default)
        return self.record(name)

    def finish(self, manifest: RunManifest) -> str:
        manifest.files = list(self.files)
        return manifest.write(self.out_dir)


def verify_manifest(out_dir: str) -> List[str]:
    """Names of files whose checksum no longer matches the manifest."""
    with open(os.path.join(out_dir, MANIFEST_NAME), encoding="utf-8") as f:
        manifest = json.load(f)
    return [entry["path"] for entry in manifest["files"]
            if sha256_file(os.path.join(out_dir, entry["path"])) != entry["sha256"]]
