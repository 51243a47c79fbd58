"""Simulated interactive annotation: corrective point edits under a budget.

Three strategies share one interaction primitive:

* non-tracking baseline: a fixed number of edits per frame, no propagation;
* online: one sequential pass, skipping frames that already meet the target
  IoU, one corrective edit otherwise;
* offline: multiple passes at rising IoU targets with up to three edits per
  frame per pass, keeping the last full-video checkpoint that stayed within
  budget.

An interaction is adding or removing one point; skipping a frame is free.
Added points propagate to later frames through the tracker; removing a point
deletes it from the current frame onward.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .backends import SegmenterBackend, TrackerBackend, track_full
from .core import (BinaryMask, LabeledPoint, PipelineConfig, PointLabel, VideoSequence)
from .errors import InvalidInputError
from .metrics import region_j
from .pipeline import two_pass_segment

DEFAULT_CHECKPOINT_THRESHOLDS = (0.10, 0.20, 0.30, 0.40, 0.50, 0.60, 0.70, 0.80, 0.90, 0.95)


@dataclass(frozen=True)
class Budget:
    max_int: int = 300
    max_int_per_frame: int = 3
    threshold: float = 0.95
    checkpoint_thresholds: tuple = DEFAULT_CHECKPOINT_THRESHOLDS


@dataclass
class PointRecord:
    point_id: int
    frame_added: int
    x: float
    y: float
    label: PointLabel
    object_id: int = 1
    removed_from: Optional[int] = None  # absent for frames >= removed_from

    def active_at(self, t: int) -> bool:
        return self.frame_added <= t and (self.removed_from is None or t < self.removed_from)


class PointMemory:
    """Add/remove events with to-frame-and-future lineage."""

    def __init__(self):
        self.records: list[PointRecord] = []
        self._next_id = 1

    def add(self, frame_index: int, x: float, y: float, label: PointLabel,
            object_id: int = 1) -> PointRecord:
        record = PointRecord(self._next_id, frame_index, x, y, label, object_id)
        self._next_id += 1
        self.records.append(record)
        return record

    def remove_from(self, record: PointRecord, frame_index: int) -> None:
        if record.removed_from is not None and record.removed_from <= frame_index:
            return
        record.removed_from = frame_index

    def active_at(self, t: int) -> list[PointRecord]:
        return [r for r in self.records if r.active_at(t)]


@dataclass(frozen=True)
class InteractionEvent:
    kind: str  # add | remove | noop
    frame_index: int
    point_id: Optional[int] = None
    label: Optional[PointLabel] = None
    x: Optional[float] = None
    y: Optional[float] = None
    pass_index: int = 0


@dataclass
class SimulationResult:
    method: str
    predictions: list  # BinaryMask per frame
    events: list  # events backing the returned predictions (within budget)
    all_events: list  # including any overdrawn discarded pass
    curve: list  # (billed interactions, mean IoU over the video) after each event
    per_frame_iou: list
    checkpoints: list = field(default_factory=list)  # (pass_index, events, mean IoU)

    @property
    def mean_iou(self) -> float:
        return float(np.mean(self.per_frame_iou)) if self.per_frame_iou else 1.0


def extract_point(region: np.ndarray) -> tuple[int, int]:
    """Pole of inaccessibility: the region pixel farthest from its complement."""
    if not region.any():
        raise InvalidInputError("cannot extract a point from an empty region")
    dist = ndimage.distance_transform_edt(region)
    y, x = np.unravel_index(int(np.argmax(dist)), dist.shape)
    return int(x), int(y)


class _Annotator:
    """Shared machinery: tracked point positions, mask prediction, event log."""

    def __init__(self, video: VideoSequence, gt_series: Sequence[BinaryMask],
                 tracker: Optional[TrackerBackend], segmenter: SegmenterBackend,
                 config: PipelineConfig):
        if len(gt_series) != video.num_frames:
            raise InvalidInputError("ground truth must cover every frame")
        self.video = video
        self.gt = list(gt_series)
        self.tracker = tracker
        self.segmenter = segmenter
        self.config = config
        self.memory = PointMemory()
        self.events: list[InteractionEvent] = []
        self._trajectories: dict[int, object] = {}

    # positions ---------------------------------------------------------------

    def _trajectory(self, record: PointRecord):
        if record.point_id not in self._trajectories:
            if self.tracker is None:
                self._trajectories[record.point_id] = None
            else:
                frames = self.video.frames[record.frame_added:]
                query = LabeledPoint(record.x, record.y, record.label)
                self._trajectories[record.point_id] = track_full(self.tracker, frames, [query])
        return self._trajectories[record.point_id]

    def position_at(self, record: PointRecord, t: int) -> Optional[tuple[float, float, bool]]:
        """(x, y, occluded) at frame t, or None when the point has no position there."""
        if t == record.frame_added:
            return record.x, record.y, False
        if self.tracker is None:
            return None
        bundle = self._trajectory(record)
        ti = t - bundle.start_frame
        if ti < 0 or ti >= bundle.num_frames:
            return None
        occluded = bundle.occlusion[ti, 0] >= self.config.occlusion_threshold
        return float(bundle.positions[ti, 0, 0]), float(bundle.positions[ti, 0, 1]), occluded

    # prediction --------------------------------------------------------------

    def predict(self, t: int, memory: Optional[PointMemory] = None) -> BinaryMask:
        memory = memory if memory is not None else self.memory
        positives, negatives = [], []
        for record in memory.active_at(t):
            pos = self.position_at(record, t)
            if pos is None or pos[2]:
                continue
            point = LabeledPoint(pos[0], pos[1], record.label)
            (positives if record.label == PointLabel.POSITIVE else negatives).append(point)
        pred, _ = two_pass_segment(self.segmenter, self.video.frames[t], positives,
                                   negatives, self.config.refinement_iterations, 1)
        return pred.mask

    def predict_all(self, memory: Optional[PointMemory] = None) -> list:
        return [self.predict(t, memory) for t in range(self.video.num_frames)]

    # the interaction primitive -------------------------------------------------

    def perform_interaction(self, t: int, pred: BinaryMask, gt: BinaryMask,
                            memory: Optional[PointMemory] = None,
                            pass_index: int = 0) -> InteractionEvent:
        """One corrective edit, in fixed priority order.

        1. remove the earliest negative point sitting in a false-negative
           region, else 2. remove the earliest positive point sitting in a
           false-positive region, else 3. add a point at the pole of the
           larger error region (positive for false negatives, negative for
           false positives). A perfect prediction yields a no-op event.
        """
        memory = memory if memory is not None else self.memory
        fn = ~pred.data & gt.data
        fp = pred.data & ~gt.data

        def in_region(record: PointRecord, region: np.ndarray) -> bool:
            pos = self.position_at(record, t)
            if pos is None:
                return False
            xi, yi = int(round(pos[0])), int(round(pos[1]))
            h, w = region.shape
            return 0 <= xi < w and 0 <= yi < h and bool(region[yi, xi])

        for record in memory.active_at(t):
            if record.label == PointLabel.NEGATIVE and in_region(record, fn):
                memory.remove_from(record, t)
                event = InteractionEvent("remove", t, point_id=record.point_id,
                                         label=record.label, pass_index=pass_index)
                self.events.append(event)
                return event
        for record in memory.active_at(t):
            if record.label == PointLabel.POSITIVE and in_region(record, fp):
                memory.remove_from(record, t)
                event = InteractionEvent("remove", t, point_id=record.point_id,
                                         label=record.label, pass_index=pass_index)
                self.events.append(event)
                return event
        if not fn.any() and not fp.any():
            event = InteractionEvent("noop", t, pass_index=pass_index)
            self.events.append(event)
            return event
        if fn.sum() > fp.sum():
            x, y = extract_point(fn)
            label = PointLabel.POSITIVE
        else:
            x, y = extract_point(fp)
            label = PointLabel.NEGATIVE
        record = memory.add(t, float(x), float(y), label)
        event = InteractionEvent("add", t, point_id=record.point_id, label=label,
                                 x=float(x), y=float(y), pass_index=pass_index)
        self.events.append(event)
        return event

    def select_first_point(self) -> InteractionEvent:
        """Seed the memory with one positive point on the first annotated frame."""
        first = next((t for t, m in enumerate(self.gt) if not m.is_empty()), None)
        if first is None:
            raise InvalidInputError("ground truth is empty on every frame")
        x, y = extract_point(self.gt[first].data)
        record = self.memory.add(first, float(x), float(y), PointLabel.POSITIVE)
        event = InteractionEvent("add", first, point_id=record.point_id,
                                 label=PointLabel.POSITIVE, x=float(x), y=float(y))
        self.events.append(event)
        return event

    def mean_iou(self, predictions: Sequence[BinaryMask]) -> float:
        return float(np.mean([region_j(p, g) for p, g in zip(predictions, self.gt)]))


def _curve_tracker(annotator: _Annotator):
    """Running (billed events, mean IoU) samples, refreshing frames from the edit onward."""
    masks = annotator.predict_all()
    samples: list[tuple[int, float]] = []

    def record(billed: int, from_frame: int):
        for t in range(from_frame, annotator.video.num_frames):
            masks[t] = annotator.predict(t)
        samples.append((billed, annotator.mean_iou(masks)))

    return samples, record


def simulate_sam_only(video: VideoSequence, gt_series: Sequence[BinaryMask],
                      segmenter: SegmenterBackend, config: PipelineConfig,
                      int_per_frame: int = 3) -> SimulationResult:
    """Frame-by-frame annotation without tracking: every frame starts from scratch."""
    annotator = _Annotator(video, gt_series, tracker=None, segmenter=segmenter, config=config)
    frame_memories = {}
    masks = [BinaryMask.zeros(video.width, video.height) for _ in range(video.num_frames)]
    curve = []
    billed = 0
    for t in range(video.num_frames):
        pmf = PointMemory()
        frame_memories[t] = pmf
        for _ in range(int_per_frame):
            mask = annotator.predict(t, pmf)
            annotator.perform_interaction(t, mask, gt_series[t], pmf)
            billed += 1
            masks[t] = annotator.predict(t, pmf)
            curve.append((billed, annotator.mean_iou(masks)))
    per_frame = [region_j(m, g) for m, g in zip(masks, gt_series)]
    return SimulationResult("sam-only", masks, list(annotator.events),
                            list(annotator.events), curve, per_frame)


def simulate_online(video: VideoSequence, gt_series: Sequence[BinaryMask],
                    tracker: TrackerBackend, segmenter: SegmenterBackend,
                    config: PipelineConfig, budget: Budget = Budget()) -> SimulationResult:
    """Single sequential pass; skip good frames, spend one edit on bad ones."""
    annotator = _Annotator(video, gt_series, tracker, segmenter, config)
    remaining = budget.max_int
    annotator.select_first_point()
    remaining -= 1
    curve, record = _curve_tracker(annotator)
    record(budget.max_int - remaining, 0)
    for t in range(video.num_frames):
        mask = annotator.predict(t)
        if region_j(mask, gt_series[t]) >= budget.threshold:
            continue
        annotator.perform_interaction(t, mask, gt_series[t])
        remaining -= 1
        record(budget.max_int - remaining, t)
        if remaining <= 0:
            break
    predictions = annotator.predict_all()
    per_frame = [region_j(m, g) for m, g in zip(predictions, gt_series)]
    return SimulationResult("online", predictions, list(annotator.events),
                            list(annotator.events), curve, per_frame)


def simulate_offline(video: VideoSequence, gt_series: Sequence[BinaryMask],
                     tracker: TrackerBackend, segmenter: SegmenterBackend,
                     config: PipelineConfig, budget: Budget = Budget()) -> SimulationResult:
    """Checkpointed multi-pass refinement at rising IoU targets.

    A checkpoint is taken after every completed pass that left the budget
    non-negative; an overdrawing pass is discarded and ends the loop. The
    returned predictions and event log come from the last valid checkpoint.
    """
    annotator = _Annotator(video, gt_series, tracker, segmenter, config)
    remaining = budget.max_int
    annotator.select_first_point()
    remaining -= 1
    curve, record = _curve_tracker(annotator)
    record(budget.max_int - remaining, 0)
    checkpoint = annotator.predict_all()
    checkpoint_events = len(annotator.events)
    checkpoints = [(0, checkpoint_events, annotator.mean_iou(checkpoint))]
    for pass_index, threshold in enumerate(budget.checkpoint_thresholds, start=1):
        for t in range(video.num_frames):
            for _ in range(budget.max_int_per_frame):
                mask = annotator.predict(t)
                if region_j(mask, gt_series[t]) >= threshold:
                    break
                annotator.perform_interaction(t, mask, gt_series[t], pass_index=pass_index)
                remaining -= 1
                record(budget.max_int - remaining, t)
        if remaining >= 0:
            checkpoint = annotator.predict_all()
            checkpoint_events = len(annotator.events)
            checkpoints.append((pass_index, checkpoint_events,
                                annotator.mean_iou(checkpoint)))
        else:
            break
    per_frame = [region_j(m, g) for m, g in zip(checkpoint, gt_series)]
    return SimulationResult("offline", checkpoint, annotator.events[:checkpoint_events],
                            list(annotator.events), curve, per_frame,
                            checkpoints=checkpoints)
