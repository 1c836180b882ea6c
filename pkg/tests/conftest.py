"""Shared fixtures: synthetic bundles, fixture images, and a tiny corpus.

Bundles carry mutable invocation counters, so tests that count encoder calls
build fresh instances via the factory fixtures instead of sharing one.
"""

import numpy as np
import pytest

from nanomorph.bundles import KIND_FEATURES, KIND_SEGMENTER, synthetic_bundle
from nanomorph.corpus import generate_corpus
from nanomorph.experiments import load_manifest


@pytest.fixture
def seg_bundle():
    """Prompt-segmenter with a 128-px input raster (16-px patches, 8x8 grid)."""
    return synthetic_bundle("test-seg", KIND_SEGMENTER, patch_size=16,
                            grid_size=8, embed_dim=16, layer_count=4,
                            hypercolumn_layers=(1, 3), seed=3)


@pytest.fixture
def feat_bundle():
    """Feature encoder with a 128-px input raster (8-px patches, 16x16 grid)."""
    return synthetic_bundle("test-feat", KIND_FEATURES, patch_size=8,
                            grid_size=16, embed_dim=16, layer_count=4,
                            hypercolumn_layers=(1, 3), seed=5)


def disk_image(size=128, center=(64, 64), radius=30, fg=200.0, bg=20.0):
    yy, xx = np.mgrid[:size, :size]
    img = np.full((size, size), bg, dtype=np.float32)
    disk = (yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= radius ** 2
    img[disk] = fg
    return img, disk


@pytest.fixture
def disk():
    return disk_image()


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """6 images per class at 128 px, with masks and a manifest CSV."""
    root = tmp_path_factory.mktemp("corpus")
    manifest_path = generate_corpus(root, per_class=6, seed=0, size=128)
    return manifest_path


@pytest.fixture(scope="session")
def tiny_manifest(tiny_corpus):
    return load_manifest(tiny_corpus)
