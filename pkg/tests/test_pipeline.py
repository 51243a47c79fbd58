import numpy as np
import pytest

from pointvos import pipeline, synthetic
from pointvos.core import (BinaryMask, Frame, LabeledPoint, PipelineConfig,
                           PointLabel, TrajectoryBundle)
from pointvos.errors import InvalidInputError
from pointvos.metrics import region_j
from pointvos.pipeline import (Seed, filter_by_patch_similarity, patch_difference,
                               reinit_trigger, two_pass_segment)
from pointvos.synthetic import make_backends, render

from conftest import CountingSegmenter, CountingTracker


def solid_frame(color, index=0, size=32):
    px = np.empty((size, size, 3), dtype=np.uint8)
    px[:] = color
    return Frame(index=index, pixels=px)


def run_scene(spec, config, wrap_segmenter=False, wrap_tracker=False, seeds=None):
    video = render(spec)
    tracker, segmenter = make_backends(spec)
    if wrap_segmenter:
        segmenter = CountingSegmenter(segmenter)
    if wrap_tracker:
        tracker = CountingTracker(tracker)
    if seeds is None:
        seeds = {o: Seed(frame_index=video.first_appearance(o),
                         mask=video.gt_masks[o][video.first_appearance(o)])
                 for o in video.gt_masks}
    run = pipeline.run(video, seeds, config, tracker, segmenter)
    return video, run, tracker, segmenter


class TestTwoPass:
    def test_zero_refinement_makes_two_calls(self, gliding_scene):
        video = render(gliding_scene)
        _, segmenter = make_backends(gliding_scene)
        counting = CountingSegmenter(segmenter)
        positives = [LabeledPoint(30.0, 40.0, PointLabel.POSITIVE, 1)]
        _, calls = two_pass_segment(counting, video.frames[0], positives, [], 0, 1)
        assert calls == 2
        assert len(counting.calls) == 2
        assert not counting.calls[0][2] and counting.calls[1][2]  # prior only on pass 2

    def test_twelve_refinements_make_fourteen_calls(self, gliding_scene):
        video = render(gliding_scene)
        _, segmenter = make_backends(gliding_scene)
        counting = CountingSegmenter(segmenter)
        positives = [LabeledPoint(30.0, 40.0, PointLabel.POSITIVE, 1)]
        _, calls = two_pass_segment(counting, video.frames[0], positives, [], 12, 1)
        assert calls == 14

    def test_first_pass_uses_positives_only(self, gliding_scene):
        video = render(gliding_scene)
        _, segmenter = make_backends(gliding_scene)
        counting = CountingSegmenter(segmenter)
        positives = [LabeledPoint(30.0, 40.0, PointLabel.POSITIVE, 1)]
        negatives = [LabeledPoint(2.0, 2.0, PointLabel.NEGATIVE, 1)]
        two_pass_segment(counting, video.frames[0], positives, negatives, 1, 1)
        assert all(p.is_positive() for p in counting.calls[0][1])
        assert any(not p.is_positive() for p in counting.calls[1][1])

    def test_refinement_is_idempotent_at_zero_noise(self, gliding_scene):
        video = render(gliding_scene)
        _, segmenter = make_backends(gliding_scene)
        positives = [LabeledPoint(30.0, 40.0, PointLabel.POSITIVE, 1)]
        masks = [two_pass_segment(segmenter, video.frames[0], positives, [], k, 1)[0].mask
                 for k in (0, 1, 5, 12)]
        assert all(m == masks[0] for m in masks)

    def test_no_visible_positives_gives_flagged_empty_without_calls(self, gliding_scene):
        video = render(gliding_scene)
        _, segmenter = make_backends(gliding_scene)
        counting = CountingSegmenter(segmenter)
        pred, calls = two_pass_segment(counting, video.frames[0], [],
                                       [LabeledPoint(1.0, 1.0, PointLabel.NEGATIVE, 1)], 3, 1)
        assert calls == 0 and pred.flagged and pred.mask.is_empty()
        assert counting.calls == []


class TestPatchSimilarity:
    def _bundle(self, positions, occlusion=None):
        positions = np.asarray(positions, dtype=np.float64)
        if occlusion is None:
            occlusion = np.zeros(positions.shape[:2])
        return TrajectoryBundle(start_frame=0, positions=positions, occlusion=occlusion,
                                labels=np.ones(positions.shape[1], dtype=np.int8),
                                objects=np.ones(positions.shape[1], dtype=np.int64))

    def test_static_identical_scene_filters_nothing(self):
        frame = solid_frame((80, 120, 200))
        frames = [solid_frame((80, 120, 200), index=i) for i in range(3)]
        bundle = self._bundle([[[10, 10]], [[10, 10]], [[10, 10]]])
        for threshold in (0.002, 0.01, 1e-6):
            out = filter_by_patch_similarity(frame, frames, bundle, threshold)
            assert not out.occlusion.any()

    def test_red_to_blue_drift_is_filtered_at_0002(self):
        red = solid_frame((255, 0, 0), index=0)
        blue = solid_frame((0, 0, 255), index=1)
        diff = patch_difference(red, (10, 10), blue, (10, 10))
        assert diff == pytest.approx(2.0 / 3.0)  # derived: mean of (1,0,-1)^2 over RGB
        bundle = self._bundle([[[10, 10]], [[10, 10]]])
        out = filter_by_patch_similarity(red, [red, blue], bundle, 0.002)
        assert out.occlusion[1, 0] == 1.0
        assert out.occlusion[0, 0] == 0.0  # the query frame is never filtered

    def test_infinite_threshold_is_a_noop(self):
        red = solid_frame((255, 0, 0), index=0)
        blue = solid_frame((0, 0, 255), index=1)
        bundle = self._bundle([[[10, 10]], [[10, 10]]])
        out = filter_by_patch_similarity(red, [red, blue], bundle, float("inf"))
        assert out is bundle

    def test_off_image_centres_clamp_instead_of_failing(self):
        frame = solid_frame((10, 10, 10))
        assert patch_difference(frame, (-5, -5), frame, (100, 100)) == 0.0

    def test_pipeline_flag_applies_filter(self, gliding_scene):
        # a point with a fully-interior patch survives filtering; masks stay exact
        video = render(gliding_scene)
        tracker, segmenter = make_backends(gliding_scene)
        center = gliding_scene.shapes[0].motion.origin
        seeds = {1: Seed(frame_index=0, points=(
            LabeledPoint(center[0], center[1], PointLabel.POSITIVE, 1),))}
        config = PipelineConfig(refinement_iterations=0,
                                patch_similarity_threshold=0.002)
        run = pipeline.run(video, seeds, config, tracker, segmenter)
        for t in range(1, video.num_frames):
            assert region_j(run.masks(1)[t], video.gt_masks[1][t]) == 1.0

    def test_tight_threshold_filters_boundary_points(self, gliding_scene):
        # a patch straddling the moving boundary drifts in appearance and is cut
        video = render(gliding_scene)
        tracker, segmenter = make_backends(gliding_scene)
        counting = CountingSegmenter(segmenter)
        center = gliding_scene.shapes[0].motion.origin
        radius = gliding_scene.shapes[0].radius
        edge = (center[0] + radius - 1, center[1])
        seeds = {1: Seed(frame_index=0, points=(
            LabeledPoint(edge[0], edge[1], PointLabel.POSITIVE, 1),))}
        config = PipelineConfig(refinement_iterations=0,
                                patch_similarity_threshold=1e-6)
        run = pipeline.run(video, seeds, config, tracker, counting)
        flagged = [t for t in range(1, video.num_frames) if run.outputs[1][t].flagged]
        assert flagged, "the edge point should get filtered at some frame"
        for t in flagged:
            assert run.masks(1)[t].is_empty()


class TestReinitTrigger:
    def test_variant_a_picks_window_end(self):
        window = [(9, 50), (10, 60), (11, 0)]
        assert reinit_trigger("A", window, initial_area=100) == 11

    def test_variant_b_picks_area_closest_to_nonempty_mean(self):
        window = [(1, 100), (2, 0), (3, 120), (4, 140)]
        assert reinit_trigger("B", window, initial_area=77) == 3  # mean of 100/120/140 = 120

    def test_variant_b_tie_breaks_earliest(self):
        window = [(1, 90), (2, 110), (3, 100)]  # mean 100: frame 3 exact, 90/110 off by 10
        assert reinit_trigger("B", window, initial_area=0) == 3
        window = [(1, 95), (2, 105)]  # mean 100, both off by 5
        assert reinit_trigger("B", window, initial_area=0) == 1

    def test_variant_b_all_empty_returns_none(self):
        assert reinit_trigger("B", [(1, 0), (2, 0)], initial_area=10) is None

    def test_variant_c_earliest_within_band(self):
        window = [(1, 40), (2, 80), (3, 95)]
        assert reinit_trigger("C", window, initial_area=100) == 2  # |80-100|/100 = 0.2

    def test_variant_c_none_within_band(self):
        window = [(1, 40), (2, 60)]
        assert reinit_trigger("C", window, initial_area=100) is None

    def test_variant_c_zero_initial_area(self):
        assert reinit_trigger("C", [(1, 10)], initial_area=0) is None


class TestRun:
    def test_end_to_end_identity_single_scene(self, trio_scene):
        video, run, _, _ = run_scene(trio_scene, PipelineConfig())
        for o in video.gt_masks:
            for t in range(1, video.num_frames):
                assert run.masks(o)[t] == video.gt_masks[o][t]

    def test_horizon_reinit_events_at_8_and_16(self, gliding_scene):
        config = PipelineConfig(reinit="A", negative_per_mask=1, horizon=8)
        _, run, _, _ = run_scene(gliding_scene, config)
        assert [(e.frame_index, e.variant) for e in run.reinit_events] == \
            [(8, "A"), (16, "A")]

    def test_point_counts_conserved_across_reinit(self, gliding_scene):
        config = PipelineConfig(reinit="A", positive_per_mask=6, negative_per_mask=2)
        video, run, tracker, _ = run_scene(gliding_scene, config, wrap_tracker=True)
        assert run.reinit_events  # reinit actually happened
        for _, _, n_queries in tracker.calls:
            assert n_queries == 8  # 6 positives + 2 negatives, before and after reinit

    def test_determinism_byte_for_byte(self, trio_scene):
        config = PipelineConfig(reinit="B", negative_per_mask=1, rng_seed=11)
        _, run_a, _, _ = run_scene(trio_scene, config)
        _, run_b, _, _ = run_scene(trio_scene, config)
        assert run_a.reinit_events == run_b.reinit_events
        for o in run_a.outputs:
            for t in run_a.outputs[o]:
                assert run_a.masks(o)[t] == run_b.masks(o)[t]
        assert run_a.initial_points == run_b.initial_points

    def test_occlusion_gating_no_occluded_point_reaches_the_segmenter(self):
        spec = synthetic.acceptance_suite()[6]  # blink occluder
        video = render(spec)
        tracker, segmenter = make_backends(spec)
        counting = CountingSegmenter(segmenter)
        world = synthetic.SceneWorld(spec)
        seeds = {1: Seed(frame_index=0, mask=video.gt_masks[1][0])}
        run = pipeline.run(video, seeds, PipelineConfig(), tracker, counting)
        occluder = spec.occluders[0]
        for frame_index, points, _ in counting.calls:
            for p in points:
                assert not occluder.contains(p.x, p.y, frame_index), \
                    f"occluded point prompted at t={frame_index}"
        hidden = [t for t in range(video.num_frames) if video.gt_masks[1][t].is_empty()]
        for t in hidden:
            assert run.outputs[1][t].flagged
            assert run.masks(1)[t].is_empty()

    def test_call_count_per_segmented_frame(self, gliding_scene):
        config = PipelineConfig(refinement_iterations=3, negative_per_mask=1)
        video, run, _, segmenter = run_scene(gliding_scene, config, wrap_segmenter=True)
        frames_segmented = sum(1 for t in run.outputs[1]
                               if not run.outputs[1][t].flagged)
        assert run.segmenter_calls == frames_segmented * (2 + 3)

    def test_cross_object_negatives_flow_into_prompts(self, trio_scene):
        config = PipelineConfig(refinement_iterations=0, negative_per_mask=0,
                                cross_object_negatives=True)
        video, run, _, segmenter = run_scene(trio_scene, config, wrap_segmenter=True)
        # pass-2 prompts for some object must contain negatives (other objects' positives)
        pass2_with_negatives = [
            (t, pts) for t, pts, had_prior in segmenter.calls
            if had_prior and any(not p.is_positive() for p in pts)]
        assert pass2_with_negatives
        config_off = PipelineConfig(refinement_iterations=0, negative_per_mask=0,
                                    cross_object_negatives=False)
        _, _, _, seg_off = run_scene(trio_scene, config_off, wrap_segmenter=True)
        assert all(all(p.is_positive() for p in pts) for _, pts, _ in seg_off.calls)

    def test_disappearance_halts_and_stays_empty(self):
        spec = synthetic.disappearance_scene()
        video = render(spec)
        tracker, segmenter = make_backends(spec)
        seeds = {1: Seed(frame_index=0, mask=video.gt_masks[1][0])}
        run = pipeline.run(video, seeds, PipelineConfig(reinit="A"), tracker, segmenter)
        assert run.disappeared == {1: 8}
        for t in range(9, video.num_frames):
            assert run.masks(1)[t].is_empty()

    def test_explicit_point_seeds_are_used_verbatim(self, gliding_scene):
        video = render(gliding_scene)
        tracker, segmenter = make_backends(gliding_scene)
        pts = (LabeledPoint(30.0, 40.0, PointLabel.POSITIVE, 1),)
        run = pipeline.run(video, {1: Seed(frame_index=0, points=pts)},
                           PipelineConfig(), tracker, segmenter)
        assert run.initial_points[1] == pts
        assert run.masks(1)[5] == video.gt_masks[1][5]

    def test_seed_validation(self):
        with pytest.raises(InvalidInputError):
            Seed(frame_index=0)
        with pytest.raises(InvalidInputError):
            Seed(frame_index=0, mask=BinaryMask.zeros(4, 4))
        with pytest.raises(InvalidInputError):
            Seed(frame_index=0, mask=BinaryMask(np.ones((4, 4), dtype=bool)),
                 points=(LabeledPoint(0, 0, PointLabel.POSITIVE, 1),))

    def test_seed_at_last_frame_is_prompt_only(self, gliding_scene):
        video = render(gliding_scene)
        tracker, segmenter = make_backends(gliding_scene)
        counting = CountingTracker(tracker)
        last = video.num_frames - 1
        run = pipeline.run(video, {1: Seed(frame_index=last, mask=video.gt_masks[1][last])},
                           PipelineConfig(), counting, segmenter)
        assert list(run.outputs[1]) == [last]
        assert run.masks(1)[last] == video.gt_masks[1][last]
        assert counting.calls == []  # nothing left to track

    def test_variant_d_synchronizes_objects(self):
        spec = synthetic.acceptance_suite()[3]  # crossing disks, 2 objects
        config = PipelineConfig(reinit="D", negative_per_mask=1)
        video, run, _, _ = run_scene(spec, config)
        by_frame = {}
        for e in run.reinit_events:
            by_frame.setdefault(e.frame_index, []).append(e.object_id)
        for frame, objs in by_frame.items():
            assert sorted(objs) == [1, 2], f"unsynchronized reinit at {frame}"
        for o in video.gt_masks:
            for t in range(1, video.num_frames):
                assert run.masks(o)[t] == video.gt_masks[o][t]

    def test_variant_c_runs_and_stays_exact_at_zero_noise(self, gliding_scene):
        config = PipelineConfig(reinit="C", negative_per_mask=1)
        video, run, _, _ = run_scene(gliding_scene, config)
        for t in range(1, video.num_frames):
            assert run.masks(1)[t] == video.gt_masks[1][t]
