import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from pointvos.core import BinaryMask
from pointvos.errors import InvalidInputError
from pointvos.metrics import (ObjectScore, SequenceScore, aggregate, boundary_map,
                              contour_f, region_j, score_sequence, visibility_bucket)

from conftest import disk_mask, rect_mask


def brute_force_boundary_f(pred: BinaryMask, gt: BinaryMask, tolerance: float) -> float:
    """Independent oracle: explicit nearest-neighbour matching between boundary sets."""
    pb = np.argwhere(boundary_map(pred))
    gb = np.argwhere(boundary_map(gt))
    if len(pb) == 0 and len(gb) == 0:
        return 1.0
    if len(pb) == 0 or len(gb) == 0:
        return 0.0

    def matched_fraction(src, dst):
        hits = 0
        for p in src:
            dmin = min(np.hypot(p[0] - q[0], p[1] - q[1]) for q in dst)
            hits += dmin <= tolerance
        return hits / len(src)

    precision = matched_fraction(pb, gb)
    recall = matched_fraction(gb, pb)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


class TestRegionJ:
    def test_identical(self):
        m = disk_mask(16, 16, 8, 8, 5)
        assert region_j(m, m) == 1.0

    def test_disjoint(self):
        a = rect_mask(16, 16, 0, 0, 4, 4)
        b = rect_mask(16, 16, 8, 8, 12, 12)
        assert region_j(a, b) == 0.0

    def test_half_overlapping_squares(self):
        a = rect_mask(32, 32, 0, 0, 10, 10)
        b = rect_mask(32, 32, 5, 0, 15, 10)
        assert region_j(a, b) == pytest.approx(50 / 150)

    def test_both_empty_is_perfect(self):
        assert region_j(BinaryMask.zeros(8, 8), BinaryMask.zeros(8, 8)) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            region_j(BinaryMask.zeros(8, 8), BinaryMask.zeros(9, 8))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a = BinaryMask(rng.random((12, 12)) < 0.5)
        b = BinaryMask(rng.random((12, 12)) < 0.5)
        assert region_j(a, b) == region_j(b, a)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_erosion_never_increases_j(self, seed):
        rng = np.random.default_rng(seed)
        gt = BinaryMask(ndimage.binary_dilation(rng.random((16, 16)) < 0.2))
        pred = gt
        last = region_j(pred, gt)
        for _ in range(3):
            eroded = BinaryMask(ndimage.binary_erosion(pred.data))
            j = region_j(eroded, gt)
            assert j <= last + 1e-12
            last = j
            pred = eroded


class TestContourF:
    def test_identical(self):
        m = disk_mask(32, 32, 16, 16, 9)
        assert contour_f(m, m, tolerance=1) == 1.0

    def test_one_pixel_shift_within_tolerance(self):
        a = rect_mask(32, 32, 8, 8, 20, 20)
        b = rect_mask(32, 32, 9, 8, 21, 20)
        assert contour_f(a, b, tolerance=1) == 1.0

    def test_five_pixel_shift_matches_brute_force(self):
        a = rect_mask(32, 32, 4, 8, 16, 20)
        b = rect_mask(32, 32, 9, 8, 21, 20)
        expected = brute_force_boundary_f(a, b, 1.0)
        assert contour_f(a, b, tolerance=1) == pytest.approx(expected, abs=1e-6)
        assert expected < 1.0

    def test_empty_conventions(self):
        empty = BinaryMask.zeros(8, 8)
        full = rect_mask(8, 8, 2, 2, 5, 5)
        assert contour_f(empty, empty, tolerance=1) == 1.0
        assert contour_f(empty, full, tolerance=1) == 0.0
        assert contour_f(full, empty, tolerance=1) == 0.0

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 100_000), tol=st.integers(0, 4))
    def test_matches_brute_force_on_random_masks(self, seed, tol):
        rng = np.random.default_rng(seed)
        a = BinaryMask(ndimage.binary_closing(rng.random((16, 16)) < 0.35))
        b = BinaryMask(ndimage.binary_closing(rng.random((16, 16)) < 0.35))
        expected = brute_force_boundary_f(a, b, tol)
        assert contour_f(a, b, tolerance=tol) == pytest.approx(expected, abs=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a = BinaryMask(rng.random((14, 14)) < 0.4)
        b = BinaryMask(rng.random((14, 14)) < 0.4)
        assert contour_f(a, b, tolerance=2) == pytest.approx(
            contour_f(b, a, tolerance=2), abs=1e-12)


class TestAggregation:
    def test_perfect_predictions(self):
        gt = {1: tuple(disk_mask(16, 16, 8, 8, 4) for _ in range(5))}
        preds = {1: {t: gt[1][t] for t in range(5)}}
        seq = score_sequence("s", preds, gt)
        assert seq.objects[1].j_mean == 1.0
        assert seq.objects[1].f_mean == 1.0
        assert seq.jf == 1.0

    def test_first_annotated_frame_is_excluded(self):
        gt = {1: tuple(disk_mask(16, 16, 8, 8, 4) for _ in range(4))}
        preds = {1: {0: BinaryMask.zeros(16, 16),  # wrong, but never scored
                     **{t: gt[1][t] for t in range(1, 4)}}}
        seq = score_sequence("s", preds, gt)
        assert 0 not in seq.objects[1].per_frame_j
        assert seq.objects[1].j_mean == 1.0

    def test_missing_prediction_scores_zero_and_is_flagged(self):
        gt = {1: tuple(disk_mask(16, 16, 8, 8, 4) for _ in range(3))}
        preds = {1: {1: gt[1][1]}}  # frame 2 missing
        seq = score_sequence("s", preds, gt)
        assert seq.objects[1].per_frame_j[2] == 0.0
        assert seq.objects[1].missing_frames == [2]

    def test_visibility_buckets(self):
        assert visibility_bucket(4) == "short"
        assert visibility_bucket(5) == "short"
        assert visibility_bucket(6) == "medium"
        assert visibility_bucket(30) == "medium"
        assert visibility_bucket(31) == "long"

    def test_short_bucket_from_gt_span(self):
        empty = BinaryMask.zeros(16, 16)
        blob = disk_mask(16, 16, 8, 8, 3)
        gt = {1: (empty, blob, blob, blob, blob, empty, empty, empty)}
        preds = {1: {t: gt[1][t] for t in range(8)}}
        seq = score_sequence("s", preds, gt)
        assert seq.objects[1].bucket == "short"

    def test_dataset_mean_is_arithmetic_over_objects(self):
        a = ObjectScore(1, 0, per_frame_j={1: 0.8}, per_frame_f={1: 0.8})
        b = ObjectScore(2, 0, per_frame_j={1: 0.6}, per_frame_f={1: 0.6})
        seq = SequenceScore("s", objects={1: a, 2: b})
        out = aggregate([seq])
        assert out["JF"] == pytest.approx(0.7)
        assert out["num_objects"] == 2
