"""Seeded synthetic corpus: four separable textures on a flat background.

The textures are chosen so the patch statistics the synthetic encoder
measures (mean, spread, horizontal/vertical gradient) differ strongly per
class: bright smooth blobs, vertical stripes, horizontal stripes, and a
block checkerboard.  That makes the classification pipeline trainable to
near-perfect accuracy without any real network weights.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from . import CLASS_NAMES
from .imaging import encode_png, mask_to_png

BACKGROUND_LEVEL = 30.0
DEFAULT_IMAGE_SIZE = 128


def _texture(label: str, shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    h, w = shape
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    amp = 80.0 * rng.uniform(0.9, 1.1)
    phase = rng.integers(0, 6)
    if label == "Cluster":
        # bright and smooth: high mean, near-zero gradients
        base = 210.0 + rng.uniform(-10.0, 10.0)
        tex = np.full(shape, base) + rng.normal(0.0, 2.0, shape)
    elif label == "Fiber":
        # vertical stripes: strong horizontal gradient only
        tex = 128.0 + amp * np.sign(np.sin(2 * np.pi * (cols + phase) / 6.0))
        tex = np.broadcast_to(tex, shape).copy()
    elif label == "Matrix":
        # horizontal stripes: strong vertical gradient only
        tex = 128.0 + amp * np.sign(np.sin(2 * np.pi * (rows + phase) / 6.0))
        tex = np.broadcast_to(tex, shape).copy()
    elif label == "MatrixSurface":
        # block checkerboard: strong gradients on both axes
        blocks = ((rows + phase) // 3 + (cols + phase) // 3) % 2
        tex = 128.0 + amp * (2.0 * blocks - 1.0)
    else:
        raise ValueError(f"unknown class label {label!r}")
    return np.clip(tex, 0.0, 255.0)


def _ellipse_mask(shape: tuple[int, int], center: tuple[float, float],
                  axes: tuple[float, float]) -> np.ndarray:
    h, w = shape
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    cy, cx = center
    ay, ax = axes
    return ((rows - cy) / ay) ** 2 + ((cols - cx) / ax) ** 2 <= 1.0


def make_particle(
    label: str,
    rng: np.random.Generator,
    size: int = 48,
) -> tuple[np.ndarray, np.ndarray]:
    """One textured elliptical particle crop plus its mask."""
    if label not in CLASS_NAMES:
        raise ValueError(f"unknown class label {label!r}")
    shape = (size, size)
    axes = (rng.uniform(0.30, 0.46) * size, rng.uniform(0.30, 0.46) * size)
    mask = _ellipse_mask(shape, (size / 2.0, size / 2.0), axes)
    crop = np.full(shape, BACKGROUND_LEVEL)
    crop[mask] = _texture(label, shape, rng)[mask]
    return crop.astype(np.float32), mask


def make_image(
    label: str,
    rng: np.random.Generator,
    size: int = DEFAULT_IMAGE_SIZE,
) -> tuple[np.ndarray, np.ndarray]:
    """A full scene: flat background with one textured particle."""
    if label not in CLASS_NAMES:
        raise ValueError(f"unknown class label {label!r}")
    shape = (size, size)
    axes = (rng.uniform(0.22, 0.38) * size, rng.uniform(0.22, 0.38) * size)
    center = (
        rng.uniform(0.35, 0.65) * size,
        rng.uniform(0.35, 0.65) * size,
    )
    mask = _ellipse_mask(shape, center, axes)
    image = np.full(shape, BACKGROUND_LEVEL)
    image[mask] = _texture(label, shape, rng)[mask]
    return image.astype(np.float32), mask


def generate_corpus(
    out_dir: str | Path,
    per_class: int = 400,
    seed: int = 0,
    size: int = DEFAULT_IMAGE_SIZE,
) -> Path:
    """Write images, masks and a manifest CSV; returns the manifest path.

    Layout: ``images/<label>_<idx>.png``, ``masks/<label>_<idx>.png`` and
    ``manifest.csv`` with columns image_path,mask_path,label (paths
    relative to the manifest's directory).  Fully determined by the seed.
    """
    if per_class < 1:
        raise ValueError(f"per_class must be >= 1, got {per_class}")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    rows = []
    for label in CLASS_NAMES:
        for idx in range(per_class):
            image, mask = make_image(label, rng, size=size)
            image_rel = f"images/{label}_{idx:04d}.png"
            mask_rel = f"masks/{label}_{idx:04d}.png"
            (out_dir / image_rel).write_bytes(encode_png(np.round(image)))
            (out_dir / mask_rel).write_bytes(mask_to_png(mask))
            rows.append((image_rel, mask_rel, label))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image_path", "mask_path", "label"])
    writer.writerows(rows)
    manifest = out_dir / "manifest.csv"
    manifest.write_text(buf.getvalue())
    return manifest
