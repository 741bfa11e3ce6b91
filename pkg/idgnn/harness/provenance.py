"""
Provenance JSON: which command ran with which configuration and seed, and
what it produced. start() writes it once the configuration is resolved
(status "running"); finish() rewrites it with artifact hashes.
"""
from __future__ import annotations

import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)

PROVENANCE_FILE = "provenance.json"


def sha256_hex(data: Union[str, bytes]) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Union[str, Path]) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def iso_now() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat().replace("+00:00", "Z")


class Artifact(BaseModel):
    path: str
    sha256: str
    bytes: int


class Provenance(BaseModel):
    command: str
    argv: List[str] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    status: str = "running"
    started_at: str = Field(default_factory=iso_now)
    finished_at: Optional[str] = None
    artifacts: List[Artifact] = Field(default_factory=list)
    error: Optional[str] = None


class ProvenanceWriter:
    """Keeps provenance.json under `out_dir` current across a run.

    Nothing touches the disk until start() or finish().
    """

    def __init__(self, out_dir: Union[str, Path], command: str, argv: List[str], seed: Optional[int] = None):
        self.out_dir = Path(out_dir)
        self.path = self.out_dir / PROVENANCE_FILE
        self.record = Provenance(command=command, argv=list(argv), seed=seed)
        self.partial: List[Path] = []   # outputs a failed run still leaves behind

    def _write(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as f:
            json.dump(self.record.model_dump(mode="json"), f, indent=2, sort_keys=True)

    def start(self, config: Dict[str, Any]) -> Path:
        self.record.config = config
        self._write()
        return self.path

    def keep(self, path: Union[str, Path]) -> None:
        self.partial.append(Path(path))

    def finish(self, artifacts: List[Union[str, Path]], status: str = "ok", error: Optional[str] = None) -> Path:
        entries = {}
        for p in [Path(a) for a in artifacts] + [p for p in self.partial if p.exists()]:
            rel = p.relative_to(self.out_dir).as_posix() if p.is_relative_to(self.out_dir) else p.as_posix()
            entries[rel] = Artifact(path=rel, sha256=sha256_file(p), bytes=p.stat().st_size)
        self.record.artifacts = [entries[k] for k in sorted(entries)]
        self.record.status = status
        self.record.error = error
        self.record.finished_at = iso_now()
        self._write()
        logger.info("Provenance (%s) written to %s", status, self.path)
        return self.path
