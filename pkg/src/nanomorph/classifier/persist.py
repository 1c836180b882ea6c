"""On-disk model format: raw float32 weights plus a JSON header sidecar.

`model.bin` holds every tensor (parameters, then batch-norm buffers)
concatenated little-endian; `model.bin.json` records the architecture,
tensor layout, class names, the standardizer that must be applied to
inputs, the training configuration and a digest of the training trace.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np

from .. import CLASS_NAMES
from ..features import Standardizer
from .models import LinearModel, MLPModel
from .train import TrainConfig, TrainingTrace

FORMAT_VERSION = 1


def trace_digest(trace: TrainingTrace) -> str:
    blob = json.dumps(trace.as_dict(), sort_keys=True).encode()
    return "sha256:" + hashlib.sha256(blob).hexdigest()


def _tensor_order(model) -> list[tuple[str, np.ndarray]]:
    items = list(model.parameters().items()) + list(model.buffers().items())
    return items


def save_model(
    path: str | Path,
    model,
    standardizer: Standardizer | None = None,
    train_config: TrainConfig | None = None,
    trace: TrainingTrace | None = None,
    extra: dict | None = None,
) -> Path:
    """Write the weight blob and its header; returns the blob path."""
    path = Path(path)
    tensors = []
    chunks = []
    offset = 0
    for name, arr in _tensor_order(model):
        data = np.ascontiguousarray(arr, dtype="<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes

    header = {
        "format_version": FORMAT_VERSION,
        "architecture": "linear" if isinstance(model, LinearModel) else "mlp",
        "in_dim": int(model.in_dim),
        "class_names": list(CLASS_NAMES),
        "tensors": tensors,
        "standardizer": standardizer.as_dict() if standardizer else None,
        "train_config": dataclasses.asdict(train_config) if train_config else None,
        "trace_digest": trace_digest(trace) if trace else None,
    }
    if isinstance(model, MLPModel):
        header["hidden"] = list(model.hidden)
        header["dropout"] = model.dropout
    if extra:
        header.update(extra)

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    Path(str(path) + ".json").write_text(json.dumps(header, indent=2))
    return path


def load_model(path: str | Path):
    """Rebuild a model from disk; returns (model, standardizer, header)."""
    path = Path(path)
    header_path = Path(str(path) + ".json")
    if not path.is_file() or not header_path.is_file():
        raise FileNotFoundError(f"model blob or header missing for {path}")
    header = json.loads(header_path.read_text())
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {header.get('format_version')!r}")

    arch = header["architecture"]
    if arch == "linear":
        model = LinearModel(int(header["in_dim"]))
    elif arch == "mlp":
        model = MLPModel(
            int(header["in_dim"]),
            hidden=tuple(header["hidden"]),
            dropout=float(header["dropout"]),
        )
    else:
        raise ValueError(f"unknown architecture {arch!r}")

    blob = path.read_bytes()
    state: dict[str, np.ndarray] = {}
    for spec_ in header["tensors"]:
        shape = tuple(spec_["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(spec_["offset"])
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
        state[spec_["name"]] = arr.reshape(shape).astype(np.float64)
    model.load_state(state)

    std = Standardizer.from_dict(header["standardizer"]) if header["standardizer"] else None
    return model, std, header
