"""Tracker and segmenter backend interfaces, plus window-chunked tracking.

Backends may live in-process (synthetic oracles, model adapters) or behind the
wire protocol in :mod:`pointvos.wire`; the engine only sees these interfaces.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import BinaryMask, Frame, LabeledPoint, MaskPrediction, TrajectoryBundle
from .errors import InvalidInputError, ProtocolError


@dataclass(frozen=True)
class TrackerCapabilities:
    predicts_occlusion: bool = True
    window_size: Optional[int] = None  # None: tracks arbitrary spans in one call


@dataclass(frozen=True)
class SegmenterCapabilities:
    accepts_dense_prior: bool = True
    proposes_masks: bool = False


class TrackerBackend(abc.ABC):
    """Propagates labelled query points over a contiguous frame span."""

    capabilities: TrackerCapabilities = TrackerCapabilities()

    @abc.abstractmethod
    def track(self, frames: Sequence[Frame], queries: Sequence[LabeledPoint]) -> TrajectoryBundle:
        """Track ``queries`` (located at frames[0]) through all given frames.

        The returned bundle covers exactly the given span, restates the queries
        at its first row, and reports zero occlusion there.
        """


class SegmenterBackend(abc.ABC):
    """Prompts a mask for one frame from labelled points and an optional dense prior."""

    capabilities: SegmenterCapabilities = SegmenterCapabilities()

    @abc.abstractmethod
    def segment(self, frame: Frame, points: Sequence[LabeledPoint],
                prior: object = None) -> MaskPrediction:
        """At least one point is required; occluded points must be filtered by the caller."""

    def propose_masks(self, frame: Frame, max_proposals: int) -> list[BinaryMask]:
        from .errors import UnsupportedCapabilityError
        raise UnsupportedCapabilityError("this segmenter does not propose masks")


def check_track_inputs(frames: Sequence[Frame], queries: Sequence[LabeledPoint]) -> None:
    if not queries:
        raise InvalidInputError("tracking needs at least one query point")
    if not frames:
        raise InvalidInputError("tracking needs at least one frame")
    indices = [f.index for f in frames]
    if indices != list(range(indices[0], indices[0] + len(indices))):
        raise InvalidInputError("tracked frames must be contiguous")


def validate_bundle(bundle: TrajectoryBundle, frames: Sequence[Frame],
                    queries: Sequence[LabeledPoint]) -> TrajectoryBundle:
    """Backend output sanity check: span, shape, query restatement, zero start occlusion."""
    if bundle.start_frame != frames[0].index:
        raise ProtocolError("bundle start frame does not match the request")
    if bundle.num_frames != len(frames) or bundle.num_points != len(queries):
        raise ProtocolError(
            f"bundle shape {(bundle.num_frames, bundle.num_points)} does not match "
            f"request {(len(frames), len(queries))}")
    expected = np.array([[q.x, q.y] for q in queries])
    if not np.allclose(bundle.positions[0], expected, atol=1e-9):
        raise ProtocolError("bundle does not restate the query points at its first frame")
    if bundle.occlusion[0].any():
        raise ProtocolError("occlusion must be zero at the query frame")
    return bundle


def stitch_windows(track_window, window: int, frames: Sequence[Frame],
                   queries: Sequence[LabeledPoint]) -> TrajectoryBundle:
    """Track a long span with a window-limited tracker, invisibly to the caller.

    The span is cut into consecutive windows of at most ``window`` frames; each
    later window is queried with the positions predicted at the previous
    window's last frame (carried forward). ``track_window(frames, queries)``
    must return a bundle for one window.
    """
    if window < 2:
        raise InvalidInputError("windowed trackers need window_size >= 2")
    positions = []
    occlusion = []
    current = list(queries)
    start = 0
    while start < len(frames):
        chunk = frames[start:start + window]
        bundle = validate_bundle(track_window(chunk, current), chunk, current)
        positions.append(bundle.positions)
        occlusion.append(bundle.occlusion)
        last = bundle.positions[-1]
        current = [
            LabeledPoint(x=float(last[i, 0]), y=float(last[i, 1]),
                         label=q.label, object_id=q.object_id)
            for i, q in enumerate(queries)
        ]
        start += len(chunk)
    return TrajectoryBundle.from_queries(
        start_frame=frames[0].index, queries=list(queries),
        positions=np.concatenate(positions, axis=0),
        occlusion=np.concatenate(occlusion, axis=0))


def track_full(tracker: TrackerBackend, frames: Sequence[Frame],
               queries: Sequence[LabeledPoint]) -> TrajectoryBundle:
    """Track over an arbitrary span, transparently chunking windowed trackers."""
    check_track_inputs(frames, queries)
    window = tracker.capabilities.window_size
    if window is None or window >= len(frames):
        return validate_bundle(tracker.track(frames, queries), frames, queries)
    return stitch_windows(tracker.track, window, frames, queries)
