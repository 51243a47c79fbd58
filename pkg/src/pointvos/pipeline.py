"""Per-object video segmentation driven by tracked query points.

For each object: sample labelled query points on its first-appearance mask,
track them across the video, prompt the segmenter per frame in two passes
(positives only, then positives + negatives + dense prior, repeated for
refinement), and optionally discard and resample the points whenever a
reinitialization variant fires.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .backends import SegmenterBackend, TrackerBackend, track_full
from .core import (BinaryMask, Frame, LabeledPoint, MaskPrediction, ObjectId,
                   PipelineConfig, PointLabel, TrajectoryBundle, VideoSequence)
from .errors import InvalidInputError
from .sampling import sample_negative, sample_points

PATCH_RADIUS = 3  # 7x7 patches for appearance-based point filtering


@dataclass(frozen=True)
class Seed:
    """Where an object enters the video: a mask to sample from, or explicit points."""

    frame_index: int
    mask: Optional[BinaryMask] = None
    points: Optional[tuple[LabeledPoint, ...]] = None

    def __post_init__(self):
        if (self.mask is None) == (self.points is None):
            raise InvalidInputError("seed needs exactly one of mask or points")
        if self.mask is not None and self.mask.is_empty():
            raise InvalidInputError("seed mask must be non-empty")
        if self.points is not None:
            object.__setattr__(self, "points", tuple(self.points))


@dataclass(frozen=True)
class ReinitEvent:
    object_id: ObjectId
    frame_index: int
    variant: str


@dataclass
class PipelineRun:
    """Everything a pipeline invocation produced, keyed by object and frame."""

    config: PipelineConfig
    outputs: dict = field(default_factory=dict)  # obj -> {frame -> MaskPrediction}
    initial_points: dict = field(default_factory=dict)  # obj -> tuple[LabeledPoint]
    reinit_events: list = field(default_factory=list)
    disappeared: dict = field(default_factory=dict)  # obj -> frame it was halted at
    occluded_counts: dict = field(default_factory=dict)  # (obj, frame) -> count
    segmenter_calls: int = 0
    elapsed_seconds: float = 0.0

    def masks(self, object_id: ObjectId) -> dict:
        return {t: p.mask for t, p in self.outputs.get(object_id, {}).items()}


def derive_seed(base: int, *parts: int) -> int:
    return int(np.random.SeedSequence([base & 0xFFFFFFFF, *[p & 0xFFFFFFFF for p in parts]])
               .generate_state(1)[0])


def two_pass_segment(segmenter: SegmenterBackend, frame: Frame,
                     positives: Sequence[LabeledPoint],
                     negatives: Sequence[LabeledPoint],
                     refinement_iterations: int,
                     object_id: ObjectId) -> tuple[MaskPrediction, int]:
    """Positives-only localisation pass, then prior-fed passes with all points.

    Returns the final prediction and the number of segmenter calls (always
    2 + refinement_iterations when any positive point is visible). With no
    visible positives the prediction is empty and flagged, without any call.
    """
    if not positives:
        empty = BinaryMask.zeros(frame.width, frame.height)
        return MaskPrediction(mask=empty, object_id=object_id, frame_index=frame.index,
                              flagged=True), 0
    first = segmenter.segment(frame, list(positives), prior=None)
    calls = 1
    prior = first.dense_prior
    result = first
    prompt = list(positives) + list(negatives)
    for _ in range(1 + refinement_iterations):
        result = segmenter.segment(frame, prompt, prior=prior)
        prior = result.dense_prior
        calls += 1
    return result, calls


def patch_difference(frame_a: Frame, xy_a: tuple[float, float],
                     frame_b: Frame, xy_b: tuple[float, float],
                     radius: int = PATCH_RADIUS) -> float:
    """Mean squared difference of two RGB patches, intensities scaled to [0, 1].

    Patch windows are clamped at image borders (edge replication), so
    off-image centres never fail.
    """
    def grab(frame: Frame, xy) -> np.ndarray:
        cx, cy = int(round(xy[0])), int(round(xy[1]))
        xs = np.clip(np.arange(cx - radius, cx + radius + 1), 0, frame.width - 1)
        ys = np.clip(np.arange(cy - radius, cy + radius + 1), 0, frame.height - 1)
        return frame.pixels[np.ix_(ys, xs)].astype(np.float64) / 255.0

    a = grab(frame_a, xy_a)
    b = grab(frame_b, xy_b)
    return float(np.mean((a - b) ** 2))


def filter_by_patch_similarity(ref_frame: Frame, frames: Sequence[Frame],
                               bundle: TrajectoryBundle,
                               threshold: Optional[float]) -> TrajectoryBundle:
    """Flag tracked points whose local appearance no longer matches the query patch.

    A point is marked occluded at frame t when the patch around its tracked
    position differs from the patch around its query position by more than
    ``threshold`` (mean squared RGB difference in [0, 1] units).
    """
    if threshold is None or not np.isfinite(threshold):
        return bundle
    if threshold <= 0:
        raise InvalidInputError("patch similarity threshold must be > 0")
    occlusion = np.array(bundle.occlusion)
    for i in range(bundle.num_points):
        ref_xy = (bundle.positions[0, i, 0], bundle.positions[0, i, 1])
        for t in range(1, bundle.num_frames):
            if occlusion[t, i] >= 1.0:
                continue
            xy = (bundle.positions[t, i, 0], bundle.positions[t, i, 1])
            if patch_difference(ref_frame, ref_xy, frames[t], xy) > threshold:
                occlusion[t, i] = 1.0
    return TrajectoryBundle(start_frame=bundle.start_frame, positions=bundle.positions,
                            occlusion=occlusion, labels=bundle.labels, objects=bundle.objects)


def reinit_trigger(variant: str, window: Sequence[tuple[int, int]],
                   initial_area: int, area_band: float = 0.25) -> Optional[int]:
    """Pick the reinitialization timestep inside one horizon window, if any.

    ``window`` holds (frame_index, mask_area) pairs for the frames strictly
    after the current reference frame, in order. Variant A fires at the window
    end; B at the non-empty frame whose area is closest to the mean non-empty
    area (earliest on ties); C at the earliest frame whose area is within
    ``area_band`` of ``initial_area``. Returns None when the variant finds no
    suitable frame.
    """
    if not window:
        return None
    if variant == "A":
        return window[-1][0]
    if variant == "B":
        nonempty = [(t, a) for t, a in window if a > 0]
        if not nonempty:
            return None
        mean_area = float(np.mean([a for _, a in nonempty]))
        return min(nonempty, key=lambda ta: (abs(ta[1] - mean_area), ta[0]))[0]
    if variant == "C":
        if initial_area <= 0:
            return None
        for t, a in window:
            if a > 0 and abs(a - initial_area) / initial_area <= area_band:
                return t
        return None
    raise InvalidInputError(f"no trigger rule for variant {variant!r}")


class _ObjectState:
    def __init__(self, object_id: ObjectId, ref: int):
        self.object_id = object_id
        self.ref = ref  # current reference frame (queries live here)
        self.points: list[LabeledPoint] = []
        self.bundle: Optional[TrajectoryBundle] = None
        self.initial_area = 0
        self.disappeared_at: Optional[int] = None
        self.generation = 0

    @property
    def active(self) -> bool:
        return self.disappeared_at is None


class _Runner:
    def __init__(self, video: VideoSequence, config: PipelineConfig,
                 tracker: TrackerBackend, segmenter: SegmenterBackend):
        self.video = video
        self.config = config
        self.tracker = tracker
        self.segmenter = segmenter
        self.run = PipelineRun(config=config)

    # ---- helpers -----------------------------------------------------------

    def _sample_object_points(self, obj: ObjectId, frame_index: int, mask: BinaryMask,
                              generation: int) -> list[LabeledPoint]:
        cfg = self.config
        frame = self.video.frames[frame_index]
        pos_seed = derive_seed(cfg.rng_seed, obj, generation, 1)
        points = [
            LabeledPoint(p.x, p.y, PointLabel.POSITIVE, obj)
            for p in sample_points(cfg.psm, mask, frame, cfg.positive_per_mask, pos_seed)
        ]
        if cfg.negative_per_mask > 0:
            neg_seed = derive_seed(cfg.rng_seed, obj, generation, 2)
            points.extend(sample_negative(obj, {obj: mask}, frame,
                                          cfg.negative_per_mask, neg_seed))
        return points

    def _track(self, state: _ObjectState, end: int) -> None:
        frames = self.video.frames[state.ref:end + 1]
        bundle = track_full(self.tracker, frames, state.points)
        bundle = filter_by_patch_similarity(self.video.frames[state.ref], frames, bundle,
                                            self.config.patch_similarity_threshold)
        state.bundle = bundle

    def _gated_points(self, state: _ObjectState, t: int) -> tuple[list, list, int]:
        pts = state.bundle.frame_points(t, self.config.occlusion_threshold)
        total = state.bundle.num_points
        positives = [p for p in pts if p.is_positive()]
        negatives = [p for p in pts if not p.is_positive()]
        return positives, negatives, total - len(pts)

    def _segment(self, state: _ObjectState, t: int, peers: Sequence[_ObjectState]) -> None:
        positives, negatives, occluded = self._gated_points(state, t)
        self.run.occluded_counts[(state.object_id, t)] = occluded
        if self.config.cross_object_negatives:
            for peer in peers:
                if peer.object_id == state.object_id or not peer.active:
                    continue
                bundle = peer.bundle
                if bundle is None or not (bundle.start_frame <= t < bundle.start_frame
                                          + bundle.num_frames):
                    continue
                for p in bundle.frame_points(t, self.config.occlusion_threshold):
                    if p.is_positive():
                        negatives.append(LabeledPoint(p.x, p.y, PointLabel.NEGATIVE,
                                                      state.object_id))
        pred, calls = two_pass_segment(self.segmenter, self.video.frames[t], positives,
                                       negatives, self.config.refinement_iterations,
                                       state.object_id)
        self.run.segmenter_calls += calls
        self.run.outputs.setdefault(state.object_id, {})[t] = pred

    def _area_at(self, state: _ObjectState, t: int) -> int:
        pred = self.run.outputs.get(state.object_id, {}).get(t)
        return 0 if pred is None or pred.flagged else pred.mask.area()

    def _mark_disappeared(self, state: _ObjectState, at: int) -> None:
        state.disappeared_at = at
        self.run.disappeared[state.object_id] = at
        empty = BinaryMask.zeros(self.video.width, self.video.height)
        for t in range(at + 1, self.video.num_frames):
            self.run.outputs.setdefault(state.object_id, {})[t] = MaskPrediction(
                mask=empty, object_id=state.object_id, frame_index=t, flagged=True)

    def _reinit(self, state: _ObjectState, t: int, variant: str) -> None:
        mask = self.run.outputs[state.object_id][t].mask
        state.generation += 1
        state.points = self._sample_object_points(state.object_id, t, mask, state.generation)
        state.ref = t
        state.initial_area = mask.area()
        state.bundle = None
        self.run.reinit_events.append(ReinitEvent(state.object_id, t, variant))

    def _carry(self, state: _ObjectState, t: int) -> None:
        """Continue without resampling: tracked positions at t become the new queries."""
        last = state.bundle.positions[t - state.bundle.start_frame]
        state.points = [
            LabeledPoint(x=float(np.clip(last[i, 0], 0, self.video.width - 1)),
                         y=float(np.clip(last[i, 1], 0, self.video.height - 1)),
                         label=PointLabel(int(state.bundle.labels[i])),
                         object_id=state.object_id)
            for i in range(state.bundle.num_points)
        ]
        state.ref = t
        state.bundle = None

    # ---- drivers -----------------------------------------------------------

    def run_all(self, states: list[_ObjectState]) -> PipelineRun:
        cfg = self.config
        # segment every reference frame with the freshly sampled points
        for state in states:
            positions = np.array([[[p.x, p.y] for p in state.points]], dtype=np.float64)
            occlusion = np.zeros((1, len(state.points)))
            state.bundle = TrajectoryBundle.from_queries(state.ref, state.points,
                                                         positions, occlusion)
            self._segment(state, state.ref, [])
            state.initial_area = self._area_at(state, state.ref)
        if cfg.reinit == "off":
            self._run_plain(states)
        elif cfg.reinit in ("A", "D"):
            self._run_synchronized(states)
        else:
            for state in states:
                self._run_independent(state)
        return self.run

    def _run_plain(self, states: list[_ObjectState]) -> None:
        T = self.video.num_frames
        for state in states:
            if state.ref < T - 1:
                self._track(state, T - 1)
        for t in range(T):
            for state in states:
                if state.ref < t:
                    self._segment(state, t, states)

    def _run_synchronized(self, states: list[_ObjectState]) -> None:
        """Variants A and D: one shared window cursor, reinit acts as a barrier."""
        cfg = self.config
        T = self.video.num_frames
        cursor = min(s.ref for s in states)
        while cursor < T - 1 and any(s.active for s in states):
            end = min(cursor + cfg.horizon, T - 1)
            live = [s for s in states if s.active and s.ref <= end]
            for state in live:
                self._track(state, end)
            for t in range(cursor + 1, end + 1):
                for state in live:
                    if state.bundle.start_frame < t:
                        self._segment(state, t, live)
            if end == T - 1:
                break
            if cfg.reinit == "A":
                for state in live:
                    if self._area_at(state, end) == 0:
                        self._mark_disappeared(state, end)
                    else:
                        self._reinit(state, end, "A")
                cursor = end
            else:  # variant D: synchronized similar-area trigger
                chosen = None
                for t in range(cursor + 1, end + 1):
                    ok = True
                    for state in live:
                        if state.ref >= t:
                            ok = False
                            break
                        area = self._area_at(state, t)
                        if state.initial_area <= 0 or area == 0 or \
                                abs(area - state.initial_area) / state.initial_area > cfg.reinit_area_band:
                            ok = False
                            break
                    if ok:
                        chosen = t
                        break
                for state in live:
                    window = [(t, self._area_at(state, t))
                              for t in range(max(state.ref, cursor) + 1, end + 1)]
                    if window and all(a == 0 for _, a in window):
                        self._mark_disappeared(state, end)
                if chosen is not None:
                    for state in live:
                        if state.active:
                            self._reinit(state, chosen, "D")
                    cursor = chosen
                else:
                    for state in live:
                        if state.active:
                            self._carry(state, end)
                    cursor = end

    def _run_independent(self, state: _ObjectState) -> None:
        """Variants B and C: each object advances its own horizon windows."""
        cfg = self.config
        T = self.video.num_frames
        while state.active and state.ref < T - 1:
            end = min(state.ref + cfg.horizon, T - 1)
            self._track(state, end)
            for t in range(state.ref + 1, end + 1):
                self._segment(state, t, [])
            if end == T - 1:
                break
            window = [(t, self._area_at(state, t)) for t in range(state.ref + 1, end + 1)]
            if all(a == 0 for _, a in window):
                self._mark_disappeared(state, end)
                break
            chosen = reinit_trigger(cfg.reinit, window, state.initial_area,
                                    cfg.reinit_area_band)
            if chosen is None:
                self._carry(state, end)
            elif self._area_at(state, chosen) == 0:
                self._mark_disappeared(state, chosen)
            else:
                self._reinit(state, chosen, cfg.reinit)


def run(video: VideoSequence, seeds: dict, config: PipelineConfig,
        tracker: TrackerBackend, segmenter: SegmenterBackend) -> PipelineRun:
    """Run the full pipeline for every seeded object.

    ``seeds`` maps object ids to :class:`Seed` values. Seeded masks are turned
    into query points with the configured selection method; explicit points
    are used as given.
    """
    if not seeds:
        raise InvalidInputError("at least one object seed is required")
    started = time.perf_counter()
    runner = _Runner(video, config, tracker, segmenter)
    states = []
    for obj in sorted(seeds):
        seed = seeds[obj]
        if not 0 <= seed.frame_index < video.num_frames:
            raise InvalidInputError(f"seed frame {seed.frame_index} outside the video")
        state = _ObjectState(obj, seed.frame_index)
        if seed.mask is not None:
            state.points = runner._sample_object_points(obj, seed.frame_index, seed.mask, 0)
        else:
            state.points = list(seed.points)
            if not any(p.is_positive() for p in state.points):
                raise InvalidInputError(f"object {obj} has no positive seed point")
        runner.run.initial_points[obj] = tuple(state.points)
        states.append(state)
    result = runner.run_all(states)
    result.elapsed_seconds = time.perf_counter() - started
    return result
