import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointvos.core import (BinaryMask, Frame, PipelineConfig, TrajectoryBundle,
                           mask_area, resize_longest_side)
from pointvos.errors import InvalidInputError

from conftest import make_frame, mask_from_bits


class TestResizeLongestSide:
    def test_full_hd_to_1024(self):
        frame = make_frame(1920, 1080)
        out, scale = resize_longest_side(frame, 1024)
        assert (out.width, out.height) == (1024, 576)
        assert scale == (1920 / 1024, 1080 / 576)

    def test_already_at_target_is_unchanged(self):
        frame = make_frame(1024, 512)
        out, scale = resize_longest_side(frame, 1024)
        assert out is frame
        assert scale == (1.0, 1.0)

    def test_portrait_rounding(self):
        # short side = round(100 * 1024 / 300) = round(341.33) = 341
        frame = make_frame(100, 300)
        out, _ = resize_longest_side(frame, 1024)
        assert (out.width, out.height) == (341, 1024)

    def test_upscales_small_frames(self):
        out, _ = resize_longest_side(make_frame(10, 5), 100)
        assert (out.width, out.height) == (100, 50)

    def test_bad_target(self):
        with pytest.raises(InvalidInputError):
            resize_longest_side(make_frame(), 0)

    def test_zero_dimension_frame_rejected(self):
        with pytest.raises(InvalidInputError):
            Frame(index=0, pixels=np.zeros((0, 4, 3), dtype=np.uint8))

    @settings(max_examples=60, deadline=None)
    @given(w=st.integers(2, 2000), h=st.integers(2, 2000),
           fx=st.floats(0, 1), fy=st.floats(0, 1))
    def test_coordinate_round_trip(self, w, h, fx, fy):
        frame = Frame(index=0, pixels=np.zeros((h, w, 3), dtype=np.uint8))
        out, (sx, sy) = resize_longest_side(frame, 64)
        x, y = fx * (out.width - 1), fy * (out.height - 1)
        back = ((x * sx) / sx, (y * sy) / sy)
        assert abs(back[0] - x) <= 0.5 and abs(back[1] - y) <= 0.5
        # and the mapped point lands inside the original frame
        assert 0 <= x * sx <= w and 0 <= y * sy <= h


class TestMaskArea:
    def test_empty(self):
        assert mask_area(BinaryMask.zeros(4, 4)) == 0

    def test_full(self):
        assert mask_area(BinaryMask(np.ones((4, 4), dtype=bool))) == 16

    def test_checkerboard_matches_enumeration(self):
        mask = mask_from_bits(["1010", "0101", "1010", "0101"])
        expected = sum(1 for y in range(4) for x in range(4) if (x + y) % 2 == 0)
        assert mask_area(mask) == expected == 8


class TestValidation:
    def test_frame_pixels_are_immutable(self):
        frame = make_frame()
        with pytest.raises(ValueError):
            frame.pixels[0, 0, 0] = 1

    def test_mask_must_be_2d(self):
        with pytest.raises(InvalidInputError):
            BinaryMask(np.zeros((2, 2, 2), dtype=bool))

    def test_bundle_occlusion_range(self):
        with pytest.raises(InvalidInputError):
            TrajectoryBundle(start_frame=0,
                             positions=np.zeros((2, 1, 2)),
                             occlusion=np.array([[0.0], [1.5]]),
                             labels=np.array([1]), objects=np.array([1]))

    def test_bundle_shape_consistency(self):
        with pytest.raises(InvalidInputError):
            TrajectoryBundle(start_frame=0, positions=np.zeros((2, 3, 2)),
                             occlusion=np.zeros((2, 2)),
                             labels=np.array([1, 1, 1]), objects=np.array([1, 1, 1]))

    def test_reinit_requires_negative_points(self):
        with pytest.raises(InvalidInputError):
            PipelineConfig(reinit="A", negative_per_mask=0)
        PipelineConfig(reinit="A", negative_per_mask=1)  # fine

    def test_config_rejects_unknown_method(self):
        with pytest.raises(InvalidInputError):
            PipelineConfig(psm="magic")

    def test_config_json_round_trip(self):
        cfg = PipelineConfig(psm="random", positive_per_mask=3, reinit="B",
                             patch_similarity_threshold=0.01)
        assert PipelineConfig.from_json(cfg.to_json()) == cfg
