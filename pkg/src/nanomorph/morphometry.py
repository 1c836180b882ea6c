"""Connected components and calibrated per-particle morphology descriptors.

Pixels are modeled as unit squares, not points: the Feret diameter is the
maximum pairwise distance over pixel *corner* points, and the moment-ellipse
axes carry a +1/12 per-eigenvalue correction. Both choices give degenerate
shapes (single pixels, 1-px-wide fibers) nonzero extent and keep
equivalent_diameter <= feret for every component.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull

from . import CLASS_NAMES

CSV_HEADER = (
    "particle_id,area_px,area_nm2,equiv_diam_nm,aspect_ratio,feret_nm,"
    "centroid_x,centroid_y,class_label,class_confidence"
)

# Intensity within this fraction of the dynamic range of an extreme counts as
# "bar-colored" during scale-bar detection.
BAR_INTENSITY_TOLERANCE = 0.02


@dataclass(frozen=True)
class Calibration:
    """Physical scale: nanometers per pixel."""

    nm_per_pixel: float
    source: str = "manual"

    def __post_init__(self):
        if not (self.nm_per_pixel > 0):
            raise ValueError(f"nm_per_pixel must be positive, got {self.nm_per_pixel}")
        if self.source not in ("manual", "bar"):
            raise ValueError(f"source must be manual|bar, got {self.source!r}")


@dataclass
class ParticleRecord:
    """Calibrated morphometrics for one connected component."""

    particle_id: int
    area_px: int
    area_nm2: float
    equivalent_diameter_nm: float
    aspect_ratio: float
    feret_nm: float
    centroid: tuple[float, float]          # (x, y) in pixels
    bbox: tuple[int, int, int, int]        # (min_x, min_y, max_x, max_y), inclusive
    class_label: str | None = None
    class_confidence: float | None = None

    def __post_init__(self):
        if self.class_label is not None and self.class_label not in CLASS_NAMES:
            raise ValueError(f"unknown class label {self.class_label!r}")
        if self.class_confidence is not None and not (0.0 <= self.class_confidence <= 1.0):
            raise ValueError(f"confidence must be in [0,1], got {self.class_confidence}")


def label_components(mask: np.ndarray, connectivity: int = 8) -> np.ndarray:
    """Label connected components 1..N in raster-scan discovery order."""
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    m = np.asarray(mask, dtype=bool)
    structure = np.ones((3, 3), dtype=int) if connectivity == 8 else None
    labels, n = ndimage.label(m, structure=structure)
    if n == 0:
        return labels
    # Canonicalize: order labels by the raster index of each component's
    # first pixel (ndimage already does this, but the contract should not
    # depend on its internals).
    flat = labels.ravel()
    nz = np.flatnonzero(flat)
    labs, first = np.unique(flat[nz], return_index=True)
    remap = np.zeros(n + 1, dtype=labels.dtype)
    remap[labs[np.argsort(first)]] = np.arange(1, n + 1, dtype=labels.dtype)
    return remap[labels]


def _corner_points(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Unique unit-square corner points (x, y) of a pixel set."""
    offs = np.array([(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)])
    pts = np.empty((rows.size * 4, 2))
    pts[:, 0] = np.repeat(cols, 4) + np.tile(offs[:, 0], rows.size)
    pts[:, 1] = np.repeat(rows, 4) + np.tile(offs[:, 1], rows.size)
    return np.unique(pts, axis=0)


def feret_diameter(rows: np.ndarray, cols: np.ndarray) -> float:
    """Max caliper over pixel corners, via convex hull + pairwise scan."""
    pts = _corner_points(rows, cols)
    hull_pts = pts[ConvexHull(pts).vertices]
    diff = hull_pts[:, None, :] - hull_pts[None, :, :]
    return float(np.sqrt((diff ** 2).sum(axis=2).max()))


def _moment_aspect_ratio(rows: np.ndarray, cols: np.ndarray) -> float:
    """Major/minor axis ratio of the moment ellipse with unit-square correction."""
    x = cols - cols.mean()
    y = rows - rows.mean()
    mu20 = float(np.mean(x * x))
    mu02 = float(np.mean(y * y))
    mu11 = float(np.mean(x * y))
    half_trace = 0.5 * (mu20 + mu02)
    spread = math.sqrt((0.5 * (mu20 - mu02)) ** 2 + mu11 ** 2)
    lam_max = half_trace + spread + 1.0 / 12.0
    lam_min = half_trace - spread + 1.0 / 12.0
    return math.sqrt(lam_max / lam_min)


def region_properties(labels: np.ndarray, calibration: Calibration) -> list[ParticleRecord]:
    """One calibrated record per component, in label order."""
    labels = np.asarray(labels)
    n = int(labels.max()) if labels.size else 0
    nmpp = calibration.nm_per_pixel
    records = []
    slices = ndimage.find_objects(labels)
    for lab in range(1, n + 1):
        sl = slices[lab - 1]
        sub = labels[sl] == lab
        rows, cols = np.nonzero(sub)
        rows = rows + sl[0].start
        cols = cols + sl[1].start
        area_px = rows.size
        equiv_px = math.sqrt(4.0 * area_px / math.pi)
        records.append(ParticleRecord(
            particle_id=lab,
            area_px=int(area_px),
            area_nm2=area_px * nmpp * nmpp,
            equivalent_diameter_nm=equiv_px * nmpp,
            aspect_ratio=_moment_aspect_ratio(rows, cols),
            feret_nm=feret_diameter(rows, cols) * nmpp,
            centroid=(float(cols.mean()), float(rows.mean())),
            bbox=(int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max())),
        ))
    return records


# -- scale calibration ---------------------------------------------------------


def calibrate(bar_length_px: float, bar_label_nm: float) -> Calibration:
    """nm/pixel from a measured bar length and its labeled physical length."""
    if not (bar_length_px > 0):
        raise ValueError(f"bar_length_px must be positive, got {bar_length_px}")
    if not (bar_label_nm > 0):
        raise ValueError(f"bar_label_nm must be positive, got {bar_label_nm}")
    return Calibration(nm_per_pixel=bar_label_nm / bar_length_px, source="bar")


def _longest_run(row: np.ndarray) -> int:
    if not row.any():
        return 0
    padded = np.concatenate([[False], row, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return int((edges[1::2] - edges[::2]).max())


def detect_scale_bar(image: np.ndarray, search_strip: float = 0.15) -> int | None:
    """Pixel length of the scale bar in the bottom strip, if one is found.

    Bar pixels are near one intensity extreme of the image; the strip's
    background is either the opposite extreme or mid-range. Of the two
    extreme-intensity pixel classes inside the strip, the *minority* class is
    taken as the bar (the background always dominates a sane strip), and the
    longest maximal horizontal run of that class is the bar length.
    """
    if not (0 < search_strip <= 0.5):
        raise ValueError(f"search_strip must be in (0, 0.5], got {search_strip}")
    img = np.asarray(image, dtype=np.float64)
    h = img.shape[0]
    strip = img[h - max(1, math.ceil(search_strip * h)):, :]
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return None
    tol = BAR_INTENSITY_TOLERANCE * (hi - lo)
    near_min = strip <= lo + tol
    near_max = strip >= hi - tol
    n_min, n_max = int(near_min.sum()), int(near_max.sum())
    if n_min == 0 and n_max == 0:
        return None
    if n_min > 0 and n_max > 0:
        bar = near_max if n_max <= n_min else near_min
    else:
        only, count = (near_min, n_min) if n_min else (near_max, n_max)
        if count >= strip.size / 2:
            return None  # a lone extreme class covering the strip is background
        bar = only
    best = max(_longest_run(bar[r]) for r in range(bar.shape[0]))
    return best or None


# -- export --------------------------------------------------------------------


def particles_to_csv(records: list[ParticleRecord]) -> str:
    """Particle table as CSV (UTF-8, LF); class columns empty when unclassified."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER.split(","))
    for r in records:
        writer.writerow([
            r.particle_id,
            r.area_px,
            format(r.area_nm2, ".10g"),
            format(r.equivalent_diameter_nm, ".10g"),
            format(r.aspect_ratio, ".10g"),
            format(r.feret_nm, ".10g"),
            format(r.centroid[0], ".10g"),
            format(r.centroid[1], ".10g"),
            r.class_label or "",
            "" if r.class_confidence is None else format(r.class_confidence, ".10g"),
        ])
    return buf.getvalue()
