"""Mask-guided hypercolumn features: downsampling, sampling, pooling,
standardization, and the on-disk descriptor cache.

A hypercolumn descriptor is the concatenation of one grid cell's token
vectors across the recorded encoder layers (5 x 768 = 3,840 dims for the
default layer set). Mask-guided sampling keeps descriptors only from cells
covered by the particle mask; uniform sampling keeps every cell. Pooling is
deterministic: descriptors are ordered by cell index before reduction, so
results do not depend on sampling order or worker count.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .bundles import KIND_SEGMENTER, FeatureStack, ModelBundle
from .imaging import resize_bilinear

MASK_GUIDED = "mask-guided"
UNIFORM = "uniform"
POOLINGS = ("avg", "max", "avg+max")

COVERAGE_THRESHOLD = 0.5
STD_EPSILON = 1e-12

CACHE_MAGIC = b"NMHC"
CACHE_VERSION = 1


class EmptySampleError(ValueError):
    """Pooling requested over an empty descriptor set."""


@dataclass(frozen=True)
class CellMask:
    """Feature-grid resolution mask with per-cell area coverage."""

    cells: np.ndarray      # (grid, grid) bool
    coverage: np.ndarray   # (grid, grid) float in [0, 1]

    @property
    def grid_size(self) -> int:
        return self.cells.shape[0]

    @property
    def true_count(self) -> int:
        return int(np.count_nonzero(self.cells))


@dataclass(frozen=True)
class HypercolumnSet:
    """Sampled descriptors plus the cells they came from."""

    descriptors: np.ndarray           # (n, D) float32
    cells: np.ndarray                 # (n, 2) int, (row, col)
    sampling_mode: str
    layer_order: tuple[int, ...]
    source_bundle: str = ""
    source_image: str = ""
    mask_hash: str | None = None

    @property
    def count(self) -> int:
        return self.descriptors.shape[0]

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]


@dataclass(frozen=True)
class PooledEmbedding:
    """Fixed-length particle descriptor: 1x or 2x the hypercolumn dim."""

    vector: np.ndarray
    pooling: str
    standardized: bool = False

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


def downsample_mask(mask: np.ndarray, grid_size: int) -> CellMask:
    """Area-average a footprint-resolution mask onto the feature grid.

    A cell is on when its coverage reaches 0.5. If no cell qualifies but the
    mask is non-empty, the single highest-coverage cell is turned on (ties:
    smallest row-major index) so tiny particles are never dropped.
    """
    m = np.asarray(mask, dtype=np.float64)
    h, w = m.shape
    if h != w or h % grid_size != 0:
        raise ValueError(
            f"mask shape {m.shape} does not tile a {grid_size}x{grid_size} grid"
        )
    cell = h // grid_size
    coverage = m.reshape(grid_size, cell, grid_size, cell).mean(axis=(1, 3))
    cells = coverage >= COVERAGE_THRESHOLD
    if not cells.any() and coverage.any():
        idx = int(np.argmax(coverage))  # argmax takes the first max in row-major order
        cells = np.zeros_like(cells)
        cells[np.unravel_index(idx, cells.shape)] = True
    return CellMask(cells=cells, coverage=coverage)


def project_mask(mask: np.ndarray, bundle: ModelBundle) -> CellMask:
    """Carry an original-resolution mask through the bundle's preprocessing
    geometry onto its feature grid."""
    m = np.asarray(mask, dtype=np.float32)
    raster, geom = bundle.preprocess(m)
    if bundle.kind == KIND_SEGMENTER:
        # Zero the padded region explicitly; resize artifacts must not leak
        # coverage outside the active area.
        footprint = np.zeros((bundle.input_size, bundle.input_size), dtype=np.float32)
        ar, ac = geom.active
        footprint[:ar, :ac] = raster[:ar, :ac]
        raster = footprint
    return downsample_mask(raster, bundle.grid_size)


def sample_hypercolumns(stack: FeatureStack, cell_mask: CellMask | None = None) -> HypercolumnSet:
    """One descriptor per selected cell, cells in row-major order.

    ``cell_mask=None`` selects every cell (the uniform baseline).
    """
    order = stack.layer_indices
    grid = stack.grid_size
    if cell_mask is None:
        rows, cols = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")
        rows, cols = rows.ravel(), cols.ravel()
        mode = UNIFORM
    else:
        if cell_mask.grid_size != grid:
            raise ValueError(
                f"cell mask grid {cell_mask.grid_size} != stack grid {grid}"
            )
        rows, cols = np.nonzero(cell_mask.cells)
        mode = MASK_GUIDED
    per_layer = [stack.layers[li][rows, cols] for li in order]
    descriptors = (
        np.concatenate(per_layer, axis=1)
        if per_layer and rows.size
        else np.zeros((0, sum(stack.layers[li].shape[2] for li in order)), np.float32)
    )
    return HypercolumnSet(
        descriptors=descriptors.astype(np.float32),
        cells=np.stack([rows, cols], axis=1).astype(np.int64),
        sampling_mode=mode,
        layer_order=order,
        source_bundle=stack.source_bundle,
        source_image=stack.source_image,
    )


def _index_sorted(hset: HypercolumnSet) -> np.ndarray:
    """Descriptors ordered by row-major cell index (fixes reduction order)."""
    width = int(hset.cells.max(initial=0)) + 1
    key = hset.cells[:, 0] * width + hset.cells[:, 1]
    return hset.descriptors[np.argsort(key, kind="stable")]


def pool(hset: HypercolumnSet, strategy: str) -> PooledEmbedding:
    """Reduce a descriptor set to a fixed-length embedding.

    "avg" and "max" keep the hypercolumn dim; "avg+max" concatenates the
    average vector then the max vector.
    """
    if strategy not in POOLINGS:
        raise ValueError(f"pooling must be one of {POOLINGS}, got {strategy!r}")
    if hset.count == 0:
        raise EmptySampleError("cannot pool an empty hypercolumn set")
    desc = _index_sorted(hset).astype(np.float64)
    if strategy == "avg":
        vec = desc.mean(axis=0)
    elif strategy == "max":
        vec = desc.max(axis=0)
    else:
        vec = np.concatenate([desc.mean(axis=0), desc.max(axis=0)])
    return PooledEmbedding(vector=vec, pooling=strategy)


# -- standardization -----------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension zero-mean/unit-variance transform fitted on training data."""

    mean: np.ndarray
    std: np.ndarray
    epsilon: float = STD_EPSILON

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def as_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
            epsilon=float(d["epsilon"]),
        )


def stack_embeddings(embeddings: list[PooledEmbedding]) -> np.ndarray:
    dims = {e.dim for e in embeddings}
    if len(dims) > 1:
        raise ValueError(f"embedding dimensions disagree: {sorted(dims)}")
    return np.stack([e.vector for e in embeddings])


def fit_standardizer(train_embeddings: list[PooledEmbedding], epsilon: float = STD_EPSILON) -> Standardizer:
    """Fit per-dim mean and population std on the training set only."""
    if len(train_embeddings) < 2:
        raise ValueError("need at least 2 embeddings to fit a standardizer")
    return fit_standardizer_matrix(stack_embeddings(train_embeddings), epsilon)


def fit_standardizer_matrix(X: np.ndarray, epsilon: float = STD_EPSILON) -> Standardizer:
    """Matrix form of :func:`fit_standardizer` for pre-stacked embeddings."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError(f"need a 2-D matrix with >= 2 rows, got shape {X.shape}")
    return Standardizer(mean=X.mean(axis=0), std=X.std(axis=0), epsilon=epsilon)


def apply_standardizer(s: Standardizer, embedding: PooledEmbedding) -> PooledEmbedding:
    """(x - mean) / std per dim; near-constant dims map to exactly 0."""
    if embedding.dim != s.dim:
        raise ValueError(f"dimension mismatch: embedding {embedding.dim}, standardizer {s.dim}")
    live = s.std > s.epsilon
    out = np.zeros_like(embedding.vector, dtype=np.float64)
    out[live] = (embedding.vector[live] - s.mean[live]) / s.std[live]
    return replace(embedding, vector=out, standardized=True)


def standardize_matrix(s: Standardizer, X: np.ndarray) -> np.ndarray:
    """Vectorized :func:`apply_standardizer` for stacked embeddings."""
    if X.shape[1] != s.dim:
        raise ValueError(f"dimension mismatch: matrix {X.shape[1]}, standardizer {s.dim}")
    live = s.std > s.epsilon
    out = np.zeros_like(X, dtype=np.float64)
    out[:, live] = (X[:, live] - s.mean[live]) / s.std[live]
    return out


# -- descriptor cache ----------------------------------------------------------


def mask_content_hash(mask: np.ndarray) -> str:
    m = np.ascontiguousarray(np.asarray(mask, dtype=bool))
    h = hashlib.sha256()
    h.update(str(m.shape).encode())
    h.update(np.packbits(m).tobytes())
    return h.hexdigest()[:16]


def save_hypercolumns(path, hset: HypercolumnSet):
    """Binary record (header + float32-LE payload) plus a JSON sidecar."""
    path = Path(path)
    header = struct.pack(
        f"<4sIIII{len(hset.layer_order)}I",
        CACHE_MAGIC, CACHE_VERSION, hset.count, hset.dim,
        len(hset.layer_order), *hset.layer_order,
    )
    payload = np.ascontiguousarray(hset.descriptors, dtype="<f4").tobytes()
    path.write_bytes(header + payload)
    sidecar = {
        "image_id": hset.source_image,
        "bundle": hset.source_bundle,
        "mask_hash": hset.mask_hash,
        "sampling_mode": hset.sampling_mode,
        "cells": hset.cells.tolist(),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar))


def load_hypercolumns(path) -> HypercolumnSet:
    path = Path(path)
    blob = path.read_bytes()
    magic, version, count, dim, n_layers = struct.unpack_from("<4sIIII", blob, 0)
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        raise ValueError(f"not a descriptor cache file: {path}")
    off = struct.calcsize("<4sIIII")
    layers = struct.unpack_from(f"<{n_layers}I", blob, off)
    off += 4 * n_layers
    descriptors = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=off)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return HypercolumnSet(
        descriptors=descriptors.reshape(count, dim).copy(),
        cells=np.asarray(sidecar["cells"], dtype=np.int64).reshape(count, 2),
        sampling_mode=sidecar["sampling_mode"],
        layer_order=tuple(int(x) for x in layers),
        source_bundle=sidecar["bundle"],
        source_image=sidecar["image_id"],
        mask_hash=sidecar.get("mask_hash"),
    )
