"""Flat content-addressed object store: one directory per object kind.

Binary objects are named by the sha256 prefix of their bytes, so writing
the same content twice is a no-op and ids are stable across restarts.
Mutable JSON records (jobs) are keyed explicitly instead.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

KINDS = ("images", "masks", "models", "caches", "jobs", "exports")
ID_LENGTH = 16


def content_id(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:ID_LENGTH]


class ObjectStore:
    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        for kind in KINDS:
            (self.root / kind).mkdir(parents=True, exist_ok=True)

    def dir(self, kind: str) -> Path:
        if kind not in KINDS:
            raise ValueError(f"unknown object kind {kind!r}")
        return self.root / kind

    def _blob_path(self, kind: str, object_id: str) -> Path:
        return self.dir(kind) / f"{object_id}.bin"

    def put(self, kind: str, data: bytes, meta: dict | None = None) -> str:
        object_id = content_id(data)
        path = self._blob_path(kind, object_id)
        if not path.exists():
            path.write_bytes(data)
        if meta is not None:
            self._meta_path(kind, object_id).write_text(json.dumps(meta))
        return object_id

    def _meta_path(self, kind: str, object_id: str) -> Path:
        return self.dir(kind) / f"{object_id}.meta.json"

    def exists(self, kind: str, object_id: str) -> bool:
        return self._blob_path(kind, object_id).is_file()

    def get(self, kind: str, object_id: str) -> bytes:
        path = self._blob_path(kind, object_id)
        if not path.is_file():
            raise KeyError(f"no {kind} object {object_id!r}")
        return path.read_bytes()

    def get_meta(self, kind: str, object_id: str) -> dict:
        path = self._meta_path(kind, object_id)
        return json.loads(path.read_text()) if path.is_file() else {}

    def list_ids(self, kind: str) -> list[str]:
        return sorted(p.stem for p in self.dir(kind).glob("*.bin"))

    # mutable JSON records, keyed by caller-chosen id (used for job state)
    def put_record(self, kind: str, record_id: str, payload: dict) -> None:
        (self.dir(kind) / f"{record_id}.json").write_text(json.dumps(payload))

    def get_record(self, kind: str, record_id: str) -> dict:
        path = self.dir(kind) / f"{record_id}.json"
        if not path.is_file():
            raise KeyError(f"no {kind} record {record_id!r}")
        return json.loads(path.read_text())
