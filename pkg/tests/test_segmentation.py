"""Session lifecycle, mask post-processing, and overlap metrics.

The metric tests carry their own brute-force oracle: every score is
recomputed from raw per-pixel truth tables and compared exactly.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nanomorph.bundles import Click
from nanomorph.segmentation import (
    EmptyHistoryError,
    SegMetrics,
    ValidationRecord,
    add_click,
    postprocess_mask,
    read_validation_records,
    replay_clicks,
    segmentation_metrics,
    start_session,
    summarize_validation,
    undo_click,
    write_validation_records,
)
from conftest import disk_image


def oracle_metrics(pred, truth):
    """Per-pixel counting oracle, written independently of the implementation."""
    tp = fp = fn = tn = 0
    for p, t in zip(pred.ravel().tolist(), truth.ravel().tolist()):
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif not p and t:
            fn += 1
        else:
            tn += 1
    dice = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 1.0
    iou = tp / (tp + fp + fn) if (tp + fp + fn) else 1.0
    precision = tp / (tp + fp) if (tp + fp) else 1.0
    recall = tp / (tp + fn) if (tp + fn) else 1.0
    accuracy = (tp + tn) / pred.size
    return dice, iou, precision, recall, accuracy


class TestMetrics:
    def test_random_pairs_match_oracle_exactly(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            h, w = rng.integers(1, 40, size=2)
            pred = rng.random((h, w)) > rng.random()
            truth = rng.random((h, w)) > rng.random()
            m = segmentation_metrics(pred, truth)
            d, i, p, r, a = oracle_metrics(pred, truth)
            assert abs(m.dice - d) <= 1e-12
            assert abs(m.iou - i) <= 1e-12
            assert abs(m.precision - p) <= 1e-12
            assert abs(m.recall - r) <= 1e-12
            assert abs(m.accuracy - a) <= 1e-12
            # algebraic identity between the two overlap scores
            assert abs(m.iou - m.dice / (2.0 - m.dice)) <= 1e-12

    def test_shifted_square_fixture(self):
        # 3x3 square vs the same square shifted one column: overlap 6 px.
        a = np.zeros((8, 8), bool)
        b = np.zeros((8, 8), bool)
        a[2:5, 2:5] = True
        b[2:5, 3:6] = True
        m = segmentation_metrics(a, b)
        assert m.dice == pytest.approx(12 / 18, abs=1e-15)
        assert m.iou == pytest.approx(0.5, abs=1e-15)

    def test_disjoint_masks_score_zero(self):
        a = np.zeros((6, 6), bool)
        b = np.zeros((6, 6), bool)
        a[0, 0] = True
        b[5, 5] = True
        m = segmentation_metrics(a, b)
        assert (m.dice, m.iou, m.precision, m.recall) == (0.0, 0.0, 0.0, 0.0)

    def test_both_empty_convention(self):
        e = np.zeros((4, 4), bool)
        m = segmentation_metrics(e, e)
        assert (m.dice, m.iou, m.precision, m.recall, m.accuracy) == (1, 1, 1, 1, 1)

    def test_one_sided_empty_conventions(self):
        empty = np.zeros((4, 4), bool)
        full = np.ones((4, 4), bool)
        m = segmentation_metrics(empty, full)
        assert m.precision == 1.0 and m.recall == 0.0
        m = segmentation_metrics(full, empty)
        assert m.precision == 0.0 and m.recall == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            segmentation_metrics(np.zeros((3, 3), bool), np.zeros((3, 4), bool))


class TestPostprocess:
    def test_small_components_dropped(self):
        mask = np.zeros((40, 40), bool)
        mask[2:3, 2:5] = True          # area 3
        mask[10:30, 10:25] = True      # area 300
        out = postprocess_mask(mask, min_size=50, border_policy="keep")
        assert out.sum() == 300
        assert not out[2, 2]

    def test_border_strip_removes_touching_component(self):
        mask = np.zeros((30, 30), bool)
        mask[0:10, 5:15] = True  # touches the top edge
        out = postprocess_mask(mask, min_size=0, border_policy="strip",
                               border_margin=2)
        assert not out.any()

    def test_border_keep_retains_touching_component(self):
        mask = np.zeros((30, 30), bool)
        mask[0:10, 5:15] = True
        out = postprocess_mask(mask, min_size=0, border_policy="keep")
        assert out.sum() == 100

    def test_interior_component_survives_strip(self):
        mask = np.zeros((30, 30), bool)
        mask[10:20, 10:20] = True
        out = postprocess_mask(mask, min_size=0, border_policy="strip",
                               border_margin=2)
        assert out.sum() == 100

    def test_margin_width_matters(self):
        mask = np.zeros((30, 30), bool)
        mask[2:10, 10:20] = True  # topmost pixels sit in row 2
        assert postprocess_mask(mask, 0, "strip", border_margin=3).sum() == 0
        assert postprocess_mask(mask, 0, "strip", border_margin=2).sum() == 80

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_subset_and_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        mask = rng.random((48, 48)) > 0.55
        out = postprocess_mask(mask, min_size=20, border_policy="strip")
        assert not np.any(out & ~mask)           # subset of the input
        again = postprocess_mask(out, min_size=20, border_policy="strip")
        np.testing.assert_array_equal(again, out)  # idempotent

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            postprocess_mask(np.zeros((4, 4), bool), min_size=-1)
        with pytest.raises(ValueError):
            postprocess_mask(np.zeros((4, 4), bool), border_policy="drop")


class TestSession:
    def test_empty_image_rejected(self, seg_bundle):
        with pytest.raises(ValueError):
            start_session(np.zeros((0, 0), np.float32), seg_bundle)

    def test_out_of_bounds_click_rejected(self, seg_bundle):
        img, _ = disk_image()
        session = start_session(img, seg_bundle)
        with pytest.raises(ValueError):
            add_click(session, Click(-1, 5))
        with pytest.raises(ValueError):
            add_click(session, Click(5, 128))

    def test_click_segments_disk(self, seg_bundle):
        img, truth = disk_image()
        session = start_session(img, seg_bundle)
        mask = add_click(session, Click(64, 64))
        np.testing.assert_array_equal(mask, truth)
        assert session.click_log == [Click(64, 64)]

    def test_undo_restores_previous_mask_bit_exactly(self, seg_bundle):
        img, truth = disk_image()
        session = start_session(img, seg_bundle)
        add_click(session, Click(64, 64))
        first = session.current_mask.copy()
        add_click(session, Click(64, 64, "negative"))
        assert not np.array_equal(session.current_mask, first)
        restored = undo_click(session)
        np.testing.assert_array_equal(restored, first)
        np.testing.assert_array_equal(restored, truth)
        assert session.click_log == [Click(64, 64)]

    def test_undo_on_fresh_session_raises(self, seg_bundle):
        img, _ = disk_image()
        session = start_session(img, seg_bundle)
        with pytest.raises(EmptyHistoryError):
            undo_click(session)

    def test_undo_ring_is_bounded(self, seg_bundle):
        img, _ = disk_image()
        session = start_session(img, seg_bundle)
        for _ in range(70):
            add_click(session, Click(64, 64))
        undone = 0
        while True:
            try:
                undo_click(session)
                undone += 1
            except EmptyHistoryError:
                break
        assert undone == 64

    def test_encoder_invoked_once_across_clicks(self, seg_bundle):
        img, _ = disk_image()
        session = start_session(img, seg_bundle)
        for k in range(12):
            polarity = "positive" if k % 3 else "negative"
            if k == 0:
                polarity = "positive"
            add_click(session, Click(30 + 5 * k, 64, polarity))
        assert seg_bundle.encoder_invocations == 1

    def test_replay_reproduces_final_mask(self, seg_bundle):
        img, _ = disk_image()
        img[90:110, 20:40] = 200.0
        session = start_session(img, seg_bundle)
        clicks = [Click(64, 64), Click(30, 100), Click(30, 100, "negative"),
                  Click(70, 64)]
        for c in clicks:
            add_click(session, c)
        final = session.current_mask
        replayed = replay_clicks(img, seg_bundle, list(session.click_log))
        np.testing.assert_array_equal(replayed, final)


class TestValidationRecords:
    def record(self, dice, clicks=3, modality="SEM", bundle="b1"):
        m = SegMetrics(dice=dice, iou=dice / (2 - dice), precision=1.0,
                       recall=dice, accuracy=0.99)
        return ValidationRecord(image_id="img", modality=modality,
                                bundle_id=bundle, metrics=m, clicks=clicks)

    def test_modality_and_clicks_validated(self):
        with pytest.raises(ValueError):
            self.record(0.9, modality="XRD")
        with pytest.raises(ValueError):
            self.record(0.9, clicks=0)

    def test_roundtrip(self, tmp_path):
        path = tmp_path / "records.jsonl"
        records = [self.record(1.0), self.record(0.8, modality="TEM")]
        write_validation_records(path, records)
        back = read_validation_records(path)
        assert back == records

    def test_summary_mean_and_sample_std(self):
        summary = summarize_validation([self.record(1.0), self.record(0.8)])
        entry = summary["SEM/b1"]
        assert entry["n"] == 2
        assert entry["dice_mean"] == pytest.approx(0.9)
        assert entry["dice_std"] == pytest.approx(0.1414, abs=1e-4)

    def test_summary_dice_threshold_fraction(self):
        summary = summarize_validation([self.record(0.95), self.record(0.85)])
        assert summary["SEM/b1"]["dice_ge_0.9_fraction"] == 0.5

    def test_summary_groups_by_modality_and_bundle(self):
        records = [self.record(0.9), self.record(0.7, modality="TEM"),
                   self.record(0.6, bundle="b2")]
        summary = summarize_validation(records)
        assert sorted(summary) == ["SEM/b1", "SEM/b2", "TEM/b1"]
        assert all(summary[k]["n"] == 1 for k in summary)
        assert summary["SEM/b1"]["dice_std"] == 0.0

    def test_summary_requires_records(self):
        with pytest.raises(ValueError):
            summarize_validation([])
