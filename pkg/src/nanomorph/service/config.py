"""Service configuration: JSON file plus environment overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

ENV_BUNDLE_DIR = "NANOMORPH_BUNDLE_DIR"
ENV_DATA_DIR = "NANOMORPH_DATA_DIR"
ENV_PORT = "NANOMORPH_PORT"
ENV_SESSION_TTL = "NANOMORPH_SESSION_TTL"
ENV_WORKERS = "NANOMORPH_WORKERS"
ENV_STATIC_DIR = "NANOMORPH_STATIC_DIR"


@dataclass(frozen=True)
class ServiceConfig:
    data_dir: Path = Path("nanomorph-data")
    bundle_dir: Path | None = None
    static_dir: Path | None = None
    port: int = 8000
    session_ttl_seconds: float = 1800.0
    workers: int = 2

    def __post_init__(self) -> None:
        if self.port < 1 or self.port > 65535:
            raise ValueError(f"port out of range: {self.port}")
        if self.session_ttl_seconds <= 0:
            raise ValueError(f"session TTL must be positive, got {self.session_ttl_seconds}")
        if self.workers < 1:
            raise ValueError(f"worker count must be >= 1, got {self.workers}")


def load_config(path: str | Path | None = None) -> ServiceConfig:
    """Defaults, overridden by a JSON config file, overridden by env vars."""
    values: dict = {}
    if path is not None:
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ValueError(f"config file {path} must hold a JSON object")
        allowed = {"data_dir", "bundle_dir", "static_dir", "port",
                   "session_ttl_seconds", "workers"}
        unknown = set(raw) - allowed
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(raw)

    env_map = {
        ENV_DATA_DIR: ("data_dir", str),
        ENV_BUNDLE_DIR: ("bundle_dir", str),
        ENV_STATIC_DIR: ("static_dir", str),
        ENV_PORT: ("port", int),
        ENV_SESSION_TTL: ("session_ttl_seconds", float),
        ENV_WORKERS: ("workers", int),
    }
    for var, (key, cast) in env_map.items():
        if os.environ.get(var):
            values[key] = cast(os.environ[var])

    for key in ("data_dir", "bundle_dir", "static_dir"):
        if values.get(key) is not None:
            values[key] = Path(values[key])
    return ServiceConfig(**values)
