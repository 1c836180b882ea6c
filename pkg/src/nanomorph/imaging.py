"""Grayscale image I/O and raster resampling.

Images are 2-D float32 arrays indexed [row, col]; click and centroid
coordinates are (x, y) = (col, row). Binary masks are 2-D bool arrays of the
same shape as their source image.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image


def load_grayscale(source) -> np.ndarray:
    """Decode PNG/TIFF bytes or a file path into a float32 grayscale raster.

    RGB(A) input is converted by Rec.601 luminance; 16-bit rasters are
    linearly rescaled to the 8-bit range so downstream intensity tolerances
    behave identically across bit depths.
    """
    if isinstance(source, (bytes, bytearray)):
        img = Image.open(io.BytesIO(source))
    else:
        img = Image.open(source)
    img.load()

    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64)
        lo, hi = arr.min(), arr.max()
        if hi > lo:
            arr = (arr - lo) * (255.0 / (hi - lo))
        else:
            arr = np.zeros_like(arr)
        return arr.astype(np.float32)
    if img.mode in ("RGB", "RGBA", "P", "LA"):
        img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.float32)
        # Rec.601 luma
        return (0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]).astype(np.float32)
    if img.mode == "F":
        return np.asarray(img, dtype=np.float32)
    # "L", "1" and friends
    return np.asarray(img.convert("L"), dtype=np.float32)


def encode_png(image: np.ndarray) -> bytes:
    """Encode a 2-D (grayscale) or HxWx3 (RGB) array as an 8-bit PNG."""
    arr = np.clip(np.asarray(image), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 3:
        mode = "RGB"
    elif arr.ndim == 2:
        mode = "L"
    else:
        raise ValueError(f"expected 2-D or HxWx3 array, got shape {arr.shape}")
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def mask_to_png(mask: np.ndarray) -> bytes:
    """Serialize a binary mask as PNG: foreground=255, background=0."""
    return encode_png(np.where(np.asarray(mask, dtype=bool), 255, 0))


def mask_from_png(data) -> np.ndarray:
    """Inverse of :func:`mask_to_png`; any nonzero pixel is foreground."""
    return load_grayscale(data) > 0


def resize_bilinear(image: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resample to ``out_shape`` = (rows, cols).

    Uses the half-pixel-center convention: destination pixel d samples the
    source at (d + 0.5) * scale - 0.5, clamped to the source extent. Resizing
    to the identical shape returns a bit-exact copy.
    """
    src = np.asarray(image, dtype=np.float64)
    h, w = src.shape
    oh, ow = out_shape
    if oh <= 0 or ow <= 0:
        raise ValueError(f"output shape must be positive, got {out_shape}")
    if (oh, ow) == (h, w):
        return src.astype(np.float32)

    ys = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)

    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]

    top = src[np.ix_(y0, x0)] * (1 - wx) + src[np.ix_(y0, x1)] * wx
    bot = src[np.ix_(y1, x0)] * (1 - wx) + src[np.ix_(y1, x1)] * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)
