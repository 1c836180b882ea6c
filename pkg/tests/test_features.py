"""Mask projection, hypercolumn sampling, pooling, standardization, cache."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from nanomorph.bundles import encode_image
from nanomorph.features import (
    CellMask,
    EmptySampleError,
    HypercolumnSet,
    PooledEmbedding,
    Standardizer,
    apply_standardizer,
    downsample_mask,
    fit_standardizer,
    fit_standardizer_matrix,
    load_hypercolumns,
    mask_content_hash,
    pool,
    project_mask,
    sample_hypercolumns,
    save_hypercolumns,
    stack_embeddings,
    standardize_matrix,
)
from conftest import disk_image


def make_set(descriptors, cells=None):
    descriptors = np.asarray(descriptors, dtype=np.float32)
    if cells is None:
        n = descriptors.shape[0]
        cells = np.stack([np.zeros(n, int), np.arange(n)], axis=1)
    return HypercolumnSet(
        descriptors=descriptors, cells=np.asarray(cells, dtype=np.int64),
        sampling_mode="mask-guided", layer_order=(1, 3),
    )


class TestDownsample:
    def test_full_cell_coverage(self):
        mask = np.zeros((32, 32), bool)
        mask[8:16, 16:24] = True  # exactly cell (1, 2) of a 4x4 grid
        cm = downsample_mask(mask, 4)
        assert cm.cells[1, 2]
        assert cm.coverage[1, 2] == 1.0
        assert cm.true_count == 1

    def test_half_coverage_threshold(self):
        mask = np.zeros((8, 8), bool)
        mask[0:2, 0:4] = True  # cell (0,0) of a 2x2 grid covered 50%
        cm = downsample_mask(mask, 2)
        assert cm.coverage[0, 0] == 0.5
        assert cm.cells[0, 0]
        mask[1, 3] = False     # drops below threshold, triggers the fallback
        cm = downsample_mask(mask, 2)
        assert cm.coverage[0, 0] == 7 / 16
        assert cm.cells[0, 0] and cm.true_count == 1

    def test_empty_mask(self):
        cm = downsample_mask(np.zeros((16, 16), bool), 4)
        assert cm.true_count == 0
        assert not cm.cells.any()

    def test_tiny_particle_falls_back_to_argmax_cell(self):
        # 3 px inside one cell of a 37x37 grid: coverage way below 0.5
        # everywhere, yet exactly that cell must light up.
        mask = np.zeros((37 * 14, 37 * 14), bool)
        r, c = 20, 31
        mask[r * 14 + 5, c * 14 + 5] = True
        mask[r * 14 + 5, c * 14 + 6] = True
        mask[r * 14 + 6, c * 14 + 5] = True
        cm = downsample_mask(mask, 37)
        assert cm.true_count == 1
        assert cm.cells[r, c]

    def test_argmax_tie_breaks_to_first_row_major(self):
        mask = np.zeros((8, 8), bool)
        mask[0, 0] = True       # cell (0,0) coverage 1/16
        mask[4, 4] = True       # cell (1,1) coverage 1/16
        cm = downsample_mask(mask, 2)
        assert cm.true_count == 1
        assert cm.cells[0, 0] and not cm.cells[1, 1]

    def test_shape_must_tile_grid(self):
        with pytest.raises(ValueError):
            downsample_mask(np.zeros((30, 30), bool), 4)
        with pytest.raises(ValueError):
            downsample_mask(np.zeros((32, 16), bool), 4)


class TestProjectMask:
    def test_feature_bundle_projection(self, feat_bundle):
        mask = np.zeros((256, 256), bool)
        mask[0:16, 0:16] = True  # maps to cell (0,0) at 128-px input, 8-px cells
        cm = project_mask(mask, feat_bundle)
        assert cm.grid_size == 16
        assert cm.cells[0, 0]
        assert cm.true_count == 1

    def test_segmenter_padding_never_gains_coverage(self, seg_bundle):
        # A wide image maps to the top half of the padded square; the bottom
        # padding rows must stay at exactly zero coverage.
        mask = np.ones((64, 128), bool)
        cm = project_mask(mask, seg_bundle)
        assert cm.cells[:4, :].all()
        assert np.all(cm.coverage[4:, :] == 0.0)


class TestSampling:
    def test_uniform_samples_every_cell(self, feat_bundle):
        img, _ = disk_image()
        stack = encode_image(feat_bundle, img)
        hset = sample_hypercolumns(stack, None)
        assert hset.count == 16 * 16
        assert hset.sampling_mode == "uniform"
        assert hset.dim == 32  # 2 layers x 16 dims

    def test_mask_guided_selects_subset(self, feat_bundle):
        img, truth = disk_image()
        stack = encode_image(feat_bundle, img)
        cm = project_mask(truth, feat_bundle)
        hset = sample_hypercolumns(stack, cm)
        assert hset.count == cm.true_count
        assert 0 < hset.count < 256
        assert hset.sampling_mode == "mask-guided"

    def test_descriptor_is_layer_concatenation(self, feat_bundle):
        img, _ = disk_image()
        stack = encode_image(feat_bundle, img)
        hset = sample_hypercolumns(stack, None)
        k = 16 * 5 + 3  # cell (5, 3)
        manual = np.concatenate([stack.layers[1][5, 3], stack.layers[3][5, 3]])
        np.testing.assert_array_equal(hset.descriptors[k], manual)

    def test_grid_mismatch_rejected(self, feat_bundle):
        img, _ = disk_image()
        stack = encode_image(feat_bundle, img)
        wrong = CellMask(cells=np.ones((8, 8), bool), coverage=np.ones((8, 8)))
        with pytest.raises(ValueError):
            sample_hypercolumns(stack, wrong)


class TestPooling:
    def test_avg_and_max_reduce(self):
        hset = make_set([[1.0, 5.0], [3.0, 1.0]])
        np.testing.assert_allclose(pool(hset, "avg").vector, [2.0, 3.0])
        np.testing.assert_allclose(pool(hset, "max").vector, [3.0, 5.0])

    def test_avg_max_concatenation_identity(self):
        rng = np.random.default_rng(0)
        hset = make_set(rng.standard_normal((7, 6)))
        combined = pool(hset, "avg+max").vector
        np.testing.assert_array_equal(
            combined, np.concatenate([pool(hset, "avg").vector,
                                      pool(hset, "max").vector])
        )
        assert pool(hset, "avg+max").dim == 12

    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2,
                                                   min_side=1, max_side=12),
                      elements=st.floats(-1e6, 1e6)),
           st.randoms(use_true_random=False))
    @settings(max_examples=60, deadline=None)
    def test_permutation_invariance(self, descriptors, rnd):
        n = descriptors.shape[0]
        order = list(range(n))
        rnd.shuffle(order)
        cells = np.stack([np.zeros(n, int), np.arange(n)], axis=1)
        base = make_set(descriptors, cells)
        shuffled = make_set(descriptors[order], cells[order])
        for strategy in ("avg", "max", "avg+max"):
            np.testing.assert_allclose(
                pool(base, strategy).vector, pool(shuffled, strategy).vector,
                rtol=0, atol=1e-12,
            )

    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2,
                                                   min_side=1, max_side=12),
                      elements=st.floats(-1e6, 1e6)))
    @settings(max_examples=60, deadline=None)
    def test_max_dominates_avg(self, descriptors):
        hset = make_set(descriptors)
        avg = pool(hset, "avg").vector
        mx = pool(hset, "max").vector
        assert np.all(mx >= avg - 1e-9)

    def test_empty_set_raises(self):
        hset = make_set(np.zeros((0, 4)), np.zeros((0, 2)))
        with pytest.raises(EmptySampleError):
            pool(hset, "avg")

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            pool(make_set([[1.0]]), "median")


class TestStandardizer:
    def test_two_point_fixture(self):
        embs = [PooledEmbedding(np.array([0.0]), "avg"),
                PooledEmbedding(np.array([2.0]), "avg")]
        s = fit_standardizer(embs)
        assert s.mean[0] == 1.0 and s.std[0] == 1.0
        out = [apply_standardizer(s, e).vector[0] for e in embs]
        assert out == [-1.0, 1.0]

    def test_mean_input_maps_to_zero(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((10, 4))
        s = fit_standardizer_matrix(X)
        at_mean = apply_standardizer(s, PooledEmbedding(s.mean.copy(), "avg"))
        np.testing.assert_allclose(at_mean.vector, 0.0, atol=1e-12)

    def test_identity_standardizer(self):
        s = Standardizer(mean=np.zeros(3), std=np.ones(3))
        x = PooledEmbedding(np.array([1.0, -2.0, 0.5]), "avg")
        np.testing.assert_array_equal(apply_standardizer(s, x).vector, x.vector)

    def test_fit_set_transforms_to_zero_mean_unit_std(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((50, 6)) * 3 + 1
        s = fit_standardizer_matrix(X)
        Z = standardize_matrix(s, X)
        np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(Z.std(axis=0), 1.0, atol=1e-9)

    def test_roundtrip_inverse(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((20, 5))
        s = fit_standardizer_matrix(X)
        Z = standardize_matrix(s, X)
        back = Z * s.std + s.mean
        np.testing.assert_allclose(back, X, atol=1e-12)

    def test_constant_dimension_maps_to_zero(self):
        X = np.stack([np.array([5.0, 1.0]), np.array([5.0, 3.0])])
        s = fit_standardizer_matrix(X)
        z = apply_standardizer(s, PooledEmbedding(np.array([5.0, 9.0]), "avg"))
        assert z.vector[0] == 0.0
        assert z.vector[1] != 0.0

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            fit_standardizer_matrix(np.zeros((1, 3)))
        with pytest.raises(ValueError):
            fit_standardizer([PooledEmbedding(np.zeros(3), "avg")])

    def test_dimension_mismatch(self):
        s = Standardizer(mean=np.zeros(3), std=np.ones(3))
        with pytest.raises(ValueError):
            apply_standardizer(s, PooledEmbedding(np.zeros(4), "avg"))
        with pytest.raises(ValueError):
            standardize_matrix(s, np.zeros((2, 4)))

    def test_dict_roundtrip(self):
        s = Standardizer(mean=np.array([1.0, 2.0]), std=np.array([3.0, 4.0]))
        back = Standardizer.from_dict(s.as_dict())
        np.testing.assert_array_equal(back.mean, s.mean)
        np.testing.assert_array_equal(back.std, s.std)

    def test_stack_requires_matching_dims(self):
        with pytest.raises(ValueError):
            stack_embeddings([PooledEmbedding(np.zeros(3), "avg"),
                              PooledEmbedding(np.zeros(4), "avg")])


class TestCache:
    def test_roundtrip_bit_exact(self, tmp_path, feat_bundle):
        img, truth = disk_image()
        stack = encode_image(feat_bundle, img)
        hset = sample_hypercolumns(stack, project_mask(truth, feat_bundle))
        hset = HypercolumnSet(
            descriptors=hset.descriptors, cells=hset.cells,
            sampling_mode=hset.sampling_mode, layer_order=hset.layer_order,
            source_bundle=hset.source_bundle, source_image=hset.source_image,
            mask_hash=mask_content_hash(truth),
        )
        path = tmp_path / "cache.nmhc"
        save_hypercolumns(path, hset)
        back = load_hypercolumns(path)
        np.testing.assert_array_equal(back.descriptors, hset.descriptors)
        np.testing.assert_array_equal(back.cells, hset.cells)
        assert back.layer_order == hset.layer_order
        assert back.sampling_mode == hset.sampling_mode
        assert back.source_bundle == hset.source_bundle
        assert back.source_image == hset.source_image
        assert back.mask_hash == hset.mask_hash

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "bogus.nmhc"
        path.write_bytes(b"PNG!" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_hypercolumns(path)

    def test_mask_hash_tracks_content_not_identity(self):
        a = np.zeros((8, 8), bool)
        a[2:4, 2:4] = True
        assert mask_content_hash(a) == mask_content_hash(a.copy())
        b = a.copy()
        b[7, 7] = True
        assert mask_content_hash(a) != mask_content_hash(b)
        # same bits, different shape must differ
        assert mask_content_hash(a.reshape(4, 16)) != mask_content_hash(a)
