"""Raster I/O and resampling contracts."""

import io

import numpy as np
import pytest
from PIL import Image

from nanomorph.imaging import (
    encode_png,
    load_grayscale,
    mask_from_png,
    mask_to_png,
    resize_bilinear,
)


def test_png_roundtrip_8bit():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(40, 56)).astype(np.float32)
    out = load_grayscale(encode_png(img))
    assert out.dtype == np.float32
    np.testing.assert_array_equal(out, img)


def test_load_from_path(tmp_path):
    img = np.arange(64, dtype=np.float32).reshape(8, 8)
    p = tmp_path / "img.png"
    p.write_bytes(encode_png(img))
    np.testing.assert_array_equal(load_grayscale(p), img)


def tiff_16bit_bytes(arr):
    buf = io.BytesIO()
    Image.fromarray(arr.astype(np.uint16)).save(buf, format="TIFF")
    return buf.getvalue()


def test_16bit_tiff_rescaled_to_8bit_range():
    # Known min/max: 1000..5000 maps linearly onto 0..255.
    arr = np.linspace(1000, 5000, 32 * 32).reshape(32, 32).astype(np.uint16)
    out = load_grayscale(tiff_16bit_bytes(arr))
    expected = (arr.astype(np.float64) - 1000) * (255.0 / 4000.0)
    assert out.min() == 0.0 and out.max() == 255.0
    np.testing.assert_allclose(out, expected.astype(np.float32), atol=1e-4)


def test_16bit_constant_tiff_is_zero():
    arr = np.full((8, 8), 777, dtype=np.uint16)
    assert load_grayscale(tiff_16bit_bytes(arr)).max() == 0.0


def test_rgb_converted_by_rec601_luma():
    rgb = np.zeros((4, 4, 3), dtype=np.uint8)
    rgb[..., 0] = 100
    rgb[..., 1] = 50
    rgb[..., 2] = 200
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    out = load_grayscale(buf.getvalue())
    expected = 0.299 * 100 + 0.587 * 50 + 0.114 * 200
    np.testing.assert_allclose(out, expected, atol=1e-4)


def test_corrupt_bytes_raise():
    with pytest.raises(Exception):
        load_grayscale(b"not an image at all")


def test_encode_png_rejects_bad_shape():
    with pytest.raises(ValueError):
        encode_png(np.zeros((4, 4, 2)))


def test_mask_png_roundtrip():
    rng = np.random.default_rng(1)
    mask = rng.random((33, 17)) > 0.6
    out = mask_from_png(mask_to_png(mask))
    assert out.dtype == bool
    np.testing.assert_array_equal(out, mask)


def test_resize_same_shape_is_bit_exact():
    rng = np.random.default_rng(2)
    img = rng.random((25, 31)).astype(np.float32) * 255
    out = resize_bilinear(img, (25, 31))
    np.testing.assert_array_equal(out, img.astype(np.float32))


def test_resize_against_pointwise_bilinear():
    # Brute-force the half-pixel-center convention at every output pixel.
    rng = np.random.default_rng(3)
    src = rng.random((7, 5)) * 100
    oh, ow = 11, 9
    out = resize_bilinear(src, (oh, ow))
    h, w = src.shape
    for r in range(oh):
        for c in range(ow):
            y = min(max((r + 0.5) * h / oh - 0.5, 0), h - 1)
            x = min(max((c + 0.5) * w / ow - 0.5, 0), w - 1)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = y - y0, x - x0
            val = (src[y0, x0] * (1 - fy) * (1 - fx) + src[y0, x1] * (1 - fy) * fx
                   + src[y1, x0] * fy * (1 - fx) + src[y1, x1] * fy * fx)
            assert out[r, c] == pytest.approx(val, abs=1e-5)


def test_resize_preserves_constant_images():
    img = np.full((16, 16), 42.0)
    out = resize_bilinear(img, (5, 23))
    np.testing.assert_allclose(out, 42.0, atol=1e-5)


def test_resize_rejects_empty_output():
    with pytest.raises(ValueError):
        resize_bilinear(np.zeros((4, 4)), (0, 4))
