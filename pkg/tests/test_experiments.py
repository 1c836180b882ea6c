"""Factorial grid protocol, result tables, and composite-scene classification."""

import json

import numpy as np
import pytest

from nanomorph import CLASS_NAMES
from nanomorph.classifier.splits import stratified_split
from nanomorph.classifier.train import TrainConfig, train_linear
from nanomorph.corpus import BACKGROUND_LEVEL, make_particle
from nanomorph.experiments import (
    ENCODER_ROLES,
    ENCODER_SEGMENTER,
    ENCODER_SELFSUP,
    RESULT_CSV_COLUMNS,
    ExperimentConfig,
    classify_per_particle,
    compose_scene,
    enumerate_configs,
    load_manifest,
    pooled_descriptor,
    results_to_csv,
    run_grid,
    split_digest,
    write_results,
)
from nanomorph.features import (
    MASK_GUIDED,
    UNIFORM,
    fit_standardizer_matrix,
)
from nanomorph.imaging import load_grayscale, mask_from_png


# module-scoped bundle copies: nothing here reads the invocation counters,
# so the grid fixtures can share one instance across the whole file
@pytest.fixture(scope="module")
def seg_bundle():
    from nanomorph.bundles import KIND_SEGMENTER, synthetic_bundle

    return synthetic_bundle("test-seg", KIND_SEGMENTER, patch_size=16,
                            grid_size=8, embed_dim=16, layer_count=4,
                            hypercolumn_layers=(1, 3), seed=3)


@pytest.fixture(scope="module")
def feat_bundle():
    from nanomorph.bundles import KIND_FEATURES, synthetic_bundle

    return synthetic_bundle("test-feat", KIND_FEATURES, patch_size=8,
                            grid_size=16, embed_dim=16, layer_count=4,
                            hypercolumn_layers=(1, 3), seed=5)


class TestEnumeration:
    def test_exactly_24_distinct_configs(self):
        configs = enumerate_configs()
        assert len(configs) == 24
        assert len(set(configs)) == 24
        assert len({c.key for c in configs}) == 24

    def test_factor_coverage(self):
        configs = enumerate_configs()
        for role in ENCODER_ROLES:
            assert sum(c.encoder == role for c in configs) == 12
        for sampling in (MASK_GUIDED, UNIFORM):
            assert sum(c.sampling == sampling for c in configs) == 12
        assert sum(c.pooling == "avg+max" for c in configs) == 8
        assert sum(c.head == "mlp" for c in configs) == 12

    def test_enumeration_order_is_nested_product(self):
        configs = enumerate_configs()
        # encoder is the slowest-varying factor, head the fastest
        assert configs[0].encoder == ENCODER_SEGMENTER
        assert configs[12].encoder == ENCODER_SELFSUP
        assert configs[0].head == "linear"
        assert configs[1].head == "mlp"
        assert configs[0].pooling == configs[1].pooling

    def test_seed_propagates(self):
        assert all(c.seed == 5 for c in enumerate_configs(seed=5))

    def test_key_format(self):
        c = ExperimentConfig(encoder=ENCODER_SEGMENTER, sampling=UNIFORM,
                             pooling="avg", head="linear")
        assert c.key == "segmenter-features|uniform|avg|linear"

    def test_config_validation(self):
        with pytest.raises(ValueError, match="encoder"):
            ExperimentConfig(encoder="vgg", sampling=UNIFORM,
                             pooling="avg", head="linear")
        with pytest.raises(ValueError, match="sampling"):
            ExperimentConfig(encoder=ENCODER_SEGMENTER, sampling="grid",
                             pooling="avg", head="linear")
        with pytest.raises(ValueError, match="pooling"):
            ExperimentConfig(encoder=ENCODER_SEGMENTER, sampling=UNIFORM,
                             pooling="sum", head="linear")
        with pytest.raises(ValueError, match="head"):
            ExperimentConfig(encoder=ENCODER_SEGMENTER, sampling=UNIFORM,
                             pooling="avg", head="tree")


class TestManifest:
    def test_loads_generated_corpus(self, tiny_manifest):
        labels = tiny_manifest.labels()
        assert labels.shape == (24,)
        assert set(labels.tolist()) == {0, 1, 2, 3}
        assert tiny_manifest.entries[0].image_path.is_file()

    def test_missing_columns_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("image_path,label\na.png,Fiber\n")
        with pytest.raises(ValueError, match="columns"):
            load_manifest(p)

    def test_unknown_label_rejected(self, tmp_path, tiny_corpus):
        row = tiny_corpus.read_text().splitlines()[1]
        img_rel, mask_rel, _ = row.split(",")
        p = tiny_corpus.parent / "bad.csv"
        p.write_text(f"image_path,mask_path,label\n{img_rel},{mask_rel},Sphere\n")
        with pytest.raises(ValueError, match="vocabulary"):
            load_manifest(p)

    def test_missing_file_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("image_path,mask_path,label\nghost.png,ghost_m.png,Fiber\n")
        with pytest.raises(FileNotFoundError):
            load_manifest(p)

    def test_empty_manifest_rejected(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("image_path,mask_path,label\n")
        with pytest.raises(ValueError, match="no samples"):
            load_manifest(p)


class TestPooledDescriptor:
    def test_sampling_modes_differ_on_masked_scene(self, feat_bundle, tiny_manifest):
        entry = tiny_manifest.entries[0]
        image = load_grayscale(entry.image_path)
        mask = mask_from_png(entry.mask_path.read_bytes())
        guided = pooled_descriptor(image, mask, feat_bundle, MASK_GUIDED, "avg")
        uniform = pooled_descriptor(image, mask, feat_bundle, UNIFORM, "avg")
        assert guided.vector.shape == uniform.vector.shape
        assert not np.array_equal(guided.vector, uniform.vector)

    def test_unknown_sampling_rejected(self, feat_bundle, tiny_manifest):
        entry = tiny_manifest.entries[0]
        image = load_grayscale(entry.image_path)
        mask = mask_from_png(entry.mask_path.read_bytes())
        with pytest.raises(ValueError, match="sampling"):
            pooled_descriptor(image, mask, feat_bundle, "stochastic", "avg")


@pytest.fixture(scope="module")
def grid_setup(tiny_manifest, seg_bundle, feat_bundle):
    bundles = {ENCODER_SEGMENTER: seg_bundle, ENCODER_SELFSUP: feat_bundle}
    split = stratified_split(tiny_manifest.labels(), seed=0,
                             ratios=(0.5, 0.25, 0.25))
    cfg = TrainConfig(max_epochs=6, patience=4, seed=0)
    return tiny_manifest, bundles, split, cfg


@pytest.fixture(scope="module")
def grid_table(grid_setup):
    manifest, bundles, split, cfg = grid_setup
    return run_grid(manifest, bundles, split=split, train_cfg=cfg, seed=0)


class TestRunGrid:
    def test_all_24_complete(self, grid_table):
        assert len(grid_table.results) == 24
        errors = [r.error for r in grid_table.results if not r.ok]
        assert errors == []
        for r in grid_table.results:
            assert 0.0 <= r.val_acc <= 1.0
            assert 0.0 <= r.test_acc <= 1.0
            assert 0.0 <= r.test_macro_f1 <= 1.0
            assert r.best_epoch >= 1

    def test_results_follow_request_order(self, grid_table):
        assert [r.config for r in grid_table.results] == enumerate_configs(0)

    def test_rerun_is_bit_identical(self, grid_setup, grid_table):
        manifest, bundles, split, cfg = grid_setup
        again = run_grid(manifest, bundles, split=split, train_cfg=cfg, seed=0)
        assert again.as_dict() == grid_table.as_dict()
        assert results_to_csv(again) == results_to_csv(grid_table)

    def test_split_digest_recorded(self, grid_setup, grid_table):
        _, _, split, _ = grid_setup
        assert grid_table.split_digest == split_digest(split)
        assert grid_table.split_digest.startswith("sha256:")

    def test_aggregates_average_completed_runs(self, grid_table):
        for level in ("avg", "max", "avg+max"):
            rows = [r for r in grid_table.results
                    if r.ok and r.config.pooling == level]
            agg = grid_table.aggregates["pooling"][level]
            assert agg["n"] == len(rows) == 8
            assert agg["test_acc"] == pytest.approx(
                np.mean([r.test_acc for r in rows]))
            assert agg["test_macro_f1"] == pytest.approx(
                np.mean([r.test_macro_f1 for r in rows]))

    def test_failures_are_recorded_not_fatal(self, grid_setup, monkeypatch):
        manifest, bundles, split, cfg = grid_setup

        def boom(*args, **kwargs):
            raise RuntimeError("boom")

        monkeypatch.setattr("nanomorph.experiments.train_linear", boom)
        configs = [
            ExperimentConfig(encoder=ENCODER_SELFSUP, sampling=UNIFORM,
                             pooling="avg", head="linear"),
            ExperimentConfig(encoder=ENCODER_SELFSUP, sampling=UNIFORM,
                             pooling="avg", head="mlp"),
        ]
        table = run_grid(manifest, bundles, configs=configs, split=split,
                         train_cfg=cfg, seed=0)
        failed, ok = table.results
        assert failed.error == "RuntimeError: boom"
        assert np.isnan(failed.test_acc)
        assert ok.ok
        assert "linear" not in table.aggregates["head"]
        assert table.aggregates["head"]["mlp"]["n"] == 1

    def test_missing_bundle_role_rejected(self, grid_setup):
        manifest, bundles, split, cfg = grid_setup
        with pytest.raises(KeyError, match=ENCODER_SELFSUP):
            run_grid(manifest, {ENCODER_SEGMENTER: bundles[ENCODER_SEGMENTER]},
                     split=split, train_cfg=cfg, seed=0)

    def test_empty_config_list_rejected(self, grid_setup):
        manifest, bundles, split, cfg = grid_setup
        with pytest.raises(ValueError, match="no configurations"):
            run_grid(manifest, bundles, configs=[], split=split, train_cfg=cfg)


class TestResultExport:
    def test_csv_shape(self, grid_table):
        lines = results_to_csv(grid_table).splitlines()
        assert lines[0] == ",".join(RESULT_CSV_COLUMNS)
        assert len(lines) == 25
        first = lines[1].split(",")
        assert first[0] in ENCODER_ROLES
        float(first[4]), float(first[5]), float(first[6])

    def test_write_results_json_and_csv_twin(self, grid_table, tmp_path):
        json_path = tmp_path / "out" / "results.json"
        write_results(grid_table, json_path)
        payload = json.loads(json_path.read_text())
        assert payload["seed"] == 0
        assert payload["split_digest"] == grid_table.split_digest
        assert len(payload["results"]) == 24
        assert payload["aggregates"] == grid_table.aggregates
        twin = json_path.with_suffix(".csv")
        assert twin.read_text() == results_to_csv(grid_table)


def aligned_particles(rng, labels, size=48):
    """Textured crops whose bounding boxes tile disjoint 8-px cell blocks."""
    return [make_particle(label, rng, size=size) for label in labels]


class TestComposeScene:
    def test_background_untouched_and_crops_pasted(self):
        rng = np.random.default_rng(6)
        particles = aligned_particles(rng, ["Cluster", "Fiber"])
        canvas = np.full((128, 128), 17.0, dtype=np.float32)
        composite, masks = compose_scene(particles, canvas, [(8, 8), (72, 72)])

        union = masks[0] | masks[1]
        np.testing.assert_array_equal(composite[~union], 17.0)
        for (crop, mask), full, (row, col) in zip(particles, masks,
                                                  [(8, 8), (72, 72)]):
            assert full.shape == canvas.shape
            assert full.sum() == mask.sum()
            np.testing.assert_array_equal(composite[full], crop[mask])
            assert full[row:row + 48, col:col + 48].sum() == mask.sum()

    def test_overlap_rejected(self):
        rng = np.random.default_rng(7)
        particles = aligned_particles(rng, ["Cluster", "Cluster"])
        canvas = np.zeros((128, 128))
        with pytest.raises(ValueError, match="overlaps"):
            compose_scene(particles, canvas, [(8, 8), (10, 10)])

    def test_out_of_bounds_rejected(self):
        rng = np.random.default_rng(8)
        particles = aligned_particles(rng, ["Matrix"])
        with pytest.raises(ValueError, match="out of bounds"):
            compose_scene(particles, np.zeros((128, 128)), [(100, 8)])
        with pytest.raises(ValueError, match="out of bounds"):
            compose_scene(particles, np.zeros((128, 128)), [(-1, 8)])

    def test_placement_count_checked(self):
        rng = np.random.default_rng(9)
        particles = aligned_particles(rng, ["Matrix"])
        with pytest.raises(ValueError, match="placement"):
            compose_scene(particles, np.zeros((128, 128)), [])


@pytest.fixture(scope="module")
def trained_scene_model(tiny_manifest, feat_bundle):
    """Linear head + standardizer fitted on mask-guided avg descriptors."""
    rows, labels = [], []
    for entry in tiny_manifest.entries:
        image = load_grayscale(entry.image_path)
        mask = mask_from_png(entry.mask_path.read_bytes())
        rows.append(pooled_descriptor(image, mask, feat_bundle,
                                      MASK_GUIDED, "avg").vector)
        labels.append(CLASS_NAMES.index(entry.label))
    x = np.stack(rows)
    y = np.array(labels, dtype=np.int64)
    std = fit_standardizer_matrix(x)
    from nanomorph.features import standardize_matrix

    model = train_linear(standardize_matrix(std, x), y,
                         TrainConfig(max_epochs=40, seed=0))
    return std, model


class TestClassifyPerParticle:
    def test_matches_isolated_classification_bit_exactly(
        self, feat_bundle, trained_scene_model
    ):
        std, model = trained_scene_model
        rng = np.random.default_rng(10)
        labels = ["Cluster", "Fiber", "Matrix"]
        particles = aligned_particles(rng, labels)
        placements = [(8, 8), (8, 72), (72, 40)]
        canvas = np.full((128, 128), BACKGROUND_LEVEL, dtype=np.float32)

        composite, masks = compose_scene(particles, canvas, placements)
        joint = classify_per_particle(composite, masks, feat_bundle, std, model)

        for particle, placement, mask, got in zip(particles, placements,
                                                  masks, joint):
            alone, [alone_mask] = compose_scene([particle], canvas, [placement])
            np.testing.assert_array_equal(alone_mask, mask)
            [(label, conf)] = classify_per_particle(
                alone, [alone_mask], feat_bundle, std, model)
            assert got[0] == label
            assert got[1] == conf  # bit-exact, not approximately

    def test_whole_image_mask_degenerate_case(self, feat_bundle,
                                              trained_scene_model, tiny_manifest):
        std, model = trained_scene_model
        entry = tiny_manifest.entries[0]
        image = load_grayscale(entry.image_path)
        full = np.ones(image.shape, dtype=bool)
        [(label, conf)] = classify_per_particle(image, [full], feat_bundle,
                                                std, model)
        assert label in CLASS_NAMES
        assert 0.0 < conf <= 1.0

    def test_empty_mask_rejected(self, feat_bundle, trained_scene_model,
                                 tiny_manifest):
        std, model = trained_scene_model
        image = load_grayscale(tiny_manifest.entries[0].image_path)
        with pytest.raises(ValueError, match="empty"):
            classify_per_particle(image, [np.zeros(image.shape, dtype=bool)],
                                  feat_bundle, std, model)
