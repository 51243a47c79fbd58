"""Adapters that put real pretrained models behind the wire protocol.

The adapters wrap plain callables, so tests can inject stubs; the loader
functions at the bottom import heavyweight model libraries lazily and only
when a checkpoint is actually requested. The primary engine and its test
suite never need this module.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .backends import (SegmenterBackend, SegmenterCapabilities, TrackerBackend,
                       TrackerCapabilities, check_track_inputs, stitch_windows)
from .core import (BinaryMask, Frame, LabeledPoint, MaskPrediction, TrajectoryBundle)
from .errors import InvalidInputError, ProtocolError
from .wire import BackendServer

SEGMENTER_VARIANTS = ("standard", "high-quality", "lightweight")
TRACKER_VARIANTS = ("pips_windowed", "cotracker_joint")


@dataclass
class SidecarConfig:
    segmenter_variant: str = "standard"
    tracker_variant: str = "pips_windowed"
    segmenter_checkpoint: Optional[str] = None
    tracker_checkpoint: Optional[str] = None
    device: str = "cpu"
    tracker_window: Optional[int] = 8  # pips-style trackers see 8 frames at a time
    tracker_predicts_occlusion: bool = True

    def __post_init__(self):
        if self.segmenter_variant not in SEGMENTER_VARIANTS:
            raise InvalidInputError(f"unknown segmenter variant {self.segmenter_variant!r}")
        if self.tracker_variant not in TRACKER_VARIANTS:
            raise InvalidInputError(f"unknown tracker variant {self.tracker_variant!r}")

    @classmethod
    def from_file(cls, path: str) -> "SidecarConfig":
        with open(path) as fh:
            raw = json.load(fh)
        raw.setdefault("device", os.environ.get("POINTVOS_DEVICE", "cpu"))
        return cls(**raw)


class CallableSegmenter(SegmenterBackend):
    """Wraps ``predict(image, xy, labels, prior_state) -> (mask, prior_state)``.

    ``prior_state`` is whatever the model uses to re-prompt itself (for
    promptable segmenters, low-resolution mask logits); it stays in-process
    and the wire server exposes it as an opaque token.
    """

    def __init__(self, predict: Callable, proposals: Optional[Callable] = None):
        self._predict = predict
        self._proposals = proposals
        self.capabilities = SegmenterCapabilities(
            accepts_dense_prior=True, proposes_masks=proposals is not None)
        self._token = object()

    def segment(self, frame: Frame, points: Sequence[LabeledPoint],
                prior: object = None) -> MaskPrediction:
        if not points:
            raise InvalidInputError("segmentation needs at least one prompt point")
        state = None
        if prior is not None:
            if not (isinstance(prior, tuple) and len(prior) == 2 and prior[0] is self._token):
                raise ProtocolError("dense prior was not produced by this backend session")
            state = prior[1]
        xy = np.array([[p.x, p.y] for p in points], dtype=np.float64)
        labels = np.array([int(p.label) for p in points], dtype=np.int64)
        mask, new_state = self._predict(np.asarray(frame.pixels), xy, labels, state)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (frame.height, frame.width):
            raise ProtocolError(f"model returned mask of shape {mask.shape} for a "
                                f"{frame.height}x{frame.width} frame")
        return MaskPrediction(mask=BinaryMask(mask), object_id=points[0].object_id,
                              frame_index=frame.index,
                              dense_prior=(self._token, new_state))

    def propose_masks(self, frame: Frame, max_proposals: int) -> list[BinaryMask]:
        if self._proposals is None:
            return super().propose_masks(frame, max_proposals)
        if max_proposals < 1:
            raise InvalidInputError("max_proposals must be >= 1")
        masks = [np.asarray(m, dtype=bool) for m in self._proposals(np.asarray(frame.pixels))]
        masks = [m for m in masks if m.any()]
        masks.sort(key=lambda m: -int(m.sum()))
        kept: list[np.ndarray] = []
        for m in masks:
            if len(kept) == max_proposals:
                break
            if all(_iou(m, k) <= 0.9 for k in kept):
                kept.append(m)
        return [BinaryMask(m) for m in kept]


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 1.0


class CallableTracker(TrackerBackend):
    """Wraps ``track(frames_thwc, xy) -> (positions, occlusion)`` model callables.

    Long spans are stitched from window-size chunks internally, carrying each
    chunk's last predicted positions as the next chunk's queries, so the
    engine may send requests of any length.
    """

    def __init__(self, track: Callable, window: Optional[int] = None,
                 predicts_occlusion: bool = True):
        self._track = track
        self.capabilities = TrackerCapabilities(
            predicts_occlusion=predicts_occlusion, window_size=window)

    def track(self, frames: Sequence[Frame], queries: Sequence[LabeledPoint]) -> TrajectoryBundle:
        check_track_inputs(frames, queries)
        window = self.capabilities.window_size
        if window is not None and len(frames) > window:
            return stitch_windows(self._track_window, window, frames, queries)
        return self._track_window(frames, queries)

    def _track_window(self, frames: Sequence[Frame],
                      queries: Sequence[LabeledPoint]) -> TrajectoryBundle:
        stack = np.stack([np.asarray(f.pixels) for f in frames])
        xy = np.array([[q.x, q.y] for q in queries], dtype=np.float64)
        positions, occlusion = self._track(stack, xy)
        positions = np.asarray(positions, dtype=np.float64)
        occlusion = np.asarray(occlusion, dtype=np.float64)
        if positions.shape != (len(frames), len(queries), 2):
            raise ProtocolError(f"model returned trajectory shape {positions.shape}")
        if not self.capabilities.predicts_occlusion:
            occlusion = np.zeros(positions.shape[:2])
        # contract: the query frame restates the queries with zero occlusion
        positions = positions.copy()
        positions[0] = xy
        occlusion = np.clip(occlusion, 0.0, 1.0)
        occlusion[0] = 0.0
        return TrajectoryBundle.from_queries(frames[0].index, list(queries),
                                             positions, occlusion)


# ---- real checkpoint loaders (heavyweight, optional) ---------------------------


def load_segmenter(config: SidecarConfig) -> CallableSegmenter:
    """Build a promptable-segmenter backend from a checkpoint.

    Requires torch and the matching model package at runtime; kept behind a
    function so the engine never imports them.
    """
    if config.segmenter_checkpoint is None:
        raise InvalidInputError("segmenter_checkpoint is not set")
    try:
        import torch  # noqa: F401
        from segment_anything import SamPredictor, sam_model_registry
    except ImportError as exc:
        raise RuntimeError(
            "the segmenter sidecar needs the 'segment-anything' package and torch; "
            "install them to serve real checkpoints") from exc
    model_type = {"standard": "vit_h", "high-quality": "vit_h",
                  "lightweight": "vit_b"}[config.segmenter_variant]
    sam = sam_model_registry[model_type](checkpoint=config.segmenter_checkpoint)
    sam.to(config.device)
    predictor = SamPredictor(sam)
    cache = {"image_id": None}

    def predict(image: np.ndarray, xy: np.ndarray, labels: np.ndarray, state):
        key = image.ctypes.data, image.shape
        if cache["image_id"] != key:
            predictor.set_image(image)
            cache["image_id"] = key
        mask_input = state[None] if state is not None else None
        masks, _, logits = predictor.predict(
            point_coords=xy.astype(np.float32), point_labels=labels.astype(np.int64),
            mask_input=mask_input, multimask_output=False)
        return masks[0], logits[0]

    return CallableSegmenter(predict)


def load_tracker(config: SidecarConfig) -> CallableTracker:
    """Build a point-tracker backend from a checkpoint (torch hub for joint trackers)."""
    try:
        import torch
    except ImportError as exc:
        raise RuntimeError("the tracker sidecar needs torch") from exc
    if config.tracker_variant == "cotracker_joint":
        model = torch.hub.load("facebookresearch/co-tracker", "cotracker2",
                               source="github")
        model = model.to(config.device).eval()

        def track(frames: np.ndarray, xy: np.ndarray):
            video = torch.from_numpy(frames).permute(0, 3, 1, 2)[None].float()
            queries = torch.cat([torch.zeros(len(xy), 1), torch.from_numpy(xy).float()],
                                dim=1)[None]
            with torch.no_grad():
                tracks, visibility = model(video.to(config.device),
                                           queries=queries.to(config.device))
            positions = tracks[0].permute(0, 1, 2).cpu().numpy()
            occlusion = 1.0 - visibility[0].float().cpu().numpy()
            return positions, occlusion

        return CallableTracker(track, window=None, predicts_occlusion=True)
    raise RuntimeError(
        "pips_windowed checkpoints must be wrapped via CallableTracker with a "
        "track callable; see README for the expected signature")


def serve(config: SidecarConfig, host: str = "127.0.0.1", port: int = 0,
          tracker: Optional[TrackerBackend] = None,
          segmenter: Optional[SegmenterBackend] = None) -> tuple[BackendServer, tuple]:
    """Start a wire-protocol endpoint for the configured models.

    Pre-built backends may be injected (tests use stubs); otherwise the
    checkpoints from the config are loaded.
    """
    tracker = tracker if tracker is not None else load_tracker(config)
    segmenter = segmenter if segmenter is not None else load_segmenter(config)
    server = BackendServer(tracker=tracker, segmenter=segmenter)
    address = server.serve_forever(host, port)
    return server, address
