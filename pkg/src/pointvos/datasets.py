"""Dataset ingestion and evaluation drivers.

Directory convention (DAVIS-style):

    <root>/JPEGImages/<sequence>/<NNNNN>.jpg|png     RGB frames
    <root>/Annotations/<sequence>/<NNNNN>.png        indexed PNG, palette value
                                                     = object id, 0 = background

MOTS-style input for conversion uses the same indexed-PNG frames (palette
value = track id) plus a ``tracks.json`` sidecar listing track flags.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .backends import SegmenterBackend, TrackerBackend
from .core import BinaryMask, Frame, PipelineConfig, VideoSequence
from .errors import InvalidDatasetError, UnsupportedCapabilityError
from . import pipeline as pipeline_mod
from .pipeline import PipelineRun, Seed
from .sampling import sample_negative, sample_points

logger = logging.getLogger(__name__)

MAX_OBJECTS_PER_VIDEO = 100
_FRAME_EXTS = (".jpg", ".jpeg", ".png")


def index_palette() -> bytes:
    """The classic 256-colour label palette (bit-interleaved), shared with the UI."""
    palette = np.zeros((256, 3), dtype=np.uint8)
    for i in range(256):
        value = i
        r = g = b = 0
        for bit in range(8):
            r |= ((value >> 0) & 1) << (7 - bit)
            g |= ((value >> 1) & 1) << (7 - bit)
            b |= ((value >> 2) & 1) << (7 - bit)
            value >>= 3
        palette[i] = (r, g, b)
    return palette.tobytes()


def save_index_png(path: str, labels: np.ndarray) -> None:
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    img.putpalette(index_palette())
    img.save(path, format="PNG")


def load_index_png(path: str) -> np.ndarray:
    img = Image.open(path)
    if img.mode != "P":
        raise InvalidDatasetError(f"{path}: annotation PNGs must be indexed (mode P), "
                                  f"got {img.mode}")
    return np.asarray(img, dtype=np.uint8)


def masks_to_labels(masks: dict, width: int, height: int) -> np.ndarray:
    """Flatten per-object masks into one label image; higher ids win overlaps."""
    labels = np.zeros((height, width), dtype=np.uint8)
    for oid in sorted(masks):
        labels[masks[oid].data] = oid
    return labels


def labels_to_masks(labels: np.ndarray) -> dict:
    return {int(v): BinaryMask(labels == v) for v in np.unique(labels) if v != 0}


@dataclass
class VosDatapoint:
    """One sequence ready for semi-supervised evaluation."""

    sequence_id: str
    video: VideoSequence
    first_appearance: dict  # ObjectId -> frame index
    seed_masks: dict  # ObjectId -> BinaryMask at the first-appearance frame
    scene_json: Optional[str] = None  # present for synthetic fixtures


def _frame_files(directory: str) -> list[str]:
    files = [f for f in os.listdir(directory)
             if os.path.splitext(f)[1].lower() in _FRAME_EXTS]
    try:
        files.sort(key=lambda f: int(os.path.splitext(f)[0]))
    except ValueError as exc:
        raise InvalidDatasetError(f"{directory}: frame names must be numeric") from exc
    return files


def load_davis_dir(root: str) -> list[VosDatapoint]:
    """Load every sequence under a DAVIS-style directory."""
    images_root = os.path.join(root, "JPEGImages")
    anno_root = os.path.join(root, "Annotations")
    if not os.path.isdir(images_root):
        raise InvalidDatasetError(f"{root}: missing JPEGImages directory")
    datapoints = []
    for seq in sorted(os.listdir(images_root)):
        seq_dir = os.path.join(images_root, seq)
        if not os.path.isdir(seq_dir):
            continue
        datapoints.append(_load_sequence(root, seq, seq_dir, os.path.join(anno_root, seq)))
    if not datapoints:
        raise InvalidDatasetError(f"{root}: no sequences found")
    return datapoints


def _load_sequence(root: str, seq: str, seq_dir: str, anno_dir: str) -> VosDatapoint:
    frame_files = _frame_files(seq_dir)
    if not frame_files:
        raise InvalidDatasetError(f"{seq_dir}: sequence has no frames")
    frames = []
    for t, fname in enumerate(frame_files):
        img = Image.open(os.path.join(seq_dir, fname)).convert("RGB")
        frames.append(Frame(index=t, pixels=np.asarray(img, dtype=np.uint8)))
    labels_by_frame: dict[int, np.ndarray] = {}
    if os.path.isdir(anno_dir):
        for fname in _frame_files(anno_dir):
            t = int(os.path.splitext(fname)[0])
            if t < len(frames):
                labels_by_frame[t] = load_index_png(os.path.join(anno_dir, fname))
    object_ids = sorted({int(v) for lab in labels_by_frame.values()
                         for v in np.unique(lab) if v != 0})
    gt_masks = {}
    first_appearance = {}
    seed_masks = {}
    h, w = frames[0].height, frames[0].width
    for oid in object_ids:
        series = []
        for t in range(len(frames)):
            lab = labels_by_frame.get(t)
            series.append(BinaryMask(lab == oid) if lab is not None
                          else BinaryMask.zeros(w, h))
        gt_masks[oid] = tuple(series)
        first = next((t for t, m in enumerate(series) if not m.is_empty()), None)
        if first is None:
            continue
        first_appearance[oid] = first
        seed_masks[oid] = series[first]
    gt_masks = {oid: gt_masks[oid] for oid in first_appearance}
    scene_path = os.path.join(root, "Scenes", f"{seq}.json")
    scene_json = None
    if os.path.isfile(scene_path):
        with open(scene_path) as fh:
            scene_json = fh.read()
    video = VideoSequence(name=seq, frames=tuple(frames), gt_masks=gt_masks)
    return VosDatapoint(sequence_id=seq, video=video, first_appearance=first_appearance,
                        seed_masks=seed_masks, scene_json=scene_json)


def save_sequence(root: str, name: str, video: VideoSequence,
                  predictions: Optional[dict] = None,
                  scene_json: Optional[str] = None) -> None:
    """Write a sequence (and optionally predicted masks) in the directory convention."""
    img_dir = os.path.join(root, "JPEGImages", name)
    os.makedirs(img_dir, exist_ok=True)
    for frame in video.frames:
        Image.fromarray(np.asarray(frame.pixels)).save(
            os.path.join(img_dir, f"{frame.index:05d}.png"))
    masks_by_frame: dict[int, dict] = {}
    if predictions is not None:
        for oid, per_frame in predictions.items():
            for t, mask in per_frame.items():
                masks_by_frame.setdefault(t, {})[oid] = mask
    else:
        for oid, series in video.gt_masks.items():
            for t, mask in enumerate(series):
                if mask is not None:
                    masks_by_frame.setdefault(t, {})[oid] = mask
    anno_dir = os.path.join(root, "Annotations", name)
    os.makedirs(anno_dir, exist_ok=True)
    for t, masks in sorted(masks_by_frame.items()):
        labels = masks_to_labels(masks, video.width, video.height)
        save_index_png(os.path.join(anno_dir, f"{t:05d}.png"), labels)
    if scene_json is not None:
        scene_dir = os.path.join(root, "Scenes")
        os.makedirs(scene_dir, exist_ok=True)
        with open(os.path.join(scene_dir, f"{name}.json"), "w") as fh:
            fh.write(scene_json)


# ---- MOTS conversion --------------------------------------------------------

@dataclass
class MotsTrack:
    track_id: int
    ignored: bool = False
    crowd: bool = False


def convert_mots(mots_dir: str, out_dir: str,
                 max_objects: int = MAX_OBJECTS_PER_VIDEO) -> dict:
    """Convert a MOTS-style sequence into semi-supervised VOS annotations.

    Rules: each kept track is seeded by its first non-empty mask; tracks
    flagged ignored/crowd are dropped; at most ``max_objects`` tracks survive,
    preferring earlier first appearance then lower track id. Track ids are
    remapped to consecutive object ids starting at 1.

    Returns the mapping {new object id -> original track id}.
    """
    with open(os.path.join(mots_dir, "tracks.json")) as fh:
        sidecar = json.load(fh)
    tracks = {t["track_id"]: MotsTrack(t["track_id"], t.get("ignored", False),
                                       t.get("crowd", False))
              for t in sidecar["tracks"]}
    mask_dir = os.path.join(mots_dir, "masks")
    frame_files = _frame_files(mask_dir)
    labels = [load_index_png(os.path.join(mask_dir, f)) for f in frame_files]

    first_seen: dict[int, int] = {}
    for t, lab in enumerate(labels):
        for v in np.unique(lab):
            if v != 0 and int(v) not in first_seen:
                first_seen[int(v)] = t
    kept = []
    for tid, track in sorted(tracks.items()):
        if track.ignored or track.crowd:
            continue
        if tid not in first_seen:
            logger.warning("track %d has no non-empty mask; dropped", tid)
            continue
        kept.append((first_seen[tid], tid))
    kept.sort()
    overflow = len(kept) - max_objects
    if overflow > 0:
        logger.warning("dropping %d tracks beyond the %d-object limit", overflow, max_objects)
        kept = kept[:max_objects]

    mapping = {new_id: tid for new_id, (_, tid) in enumerate(kept, start=1)}
    reverse = {tid: new_id for new_id, tid in mapping.items()}
    sequence = sidecar.get("sequence", "seq")
    anno_dir = os.path.join(out_dir, "Annotations", sequence)
    os.makedirs(anno_dir, exist_ok=True)
    for t, lab in enumerate(labels):
        out = np.zeros_like(lab)
        for tid, new_id in reverse.items():
            out[lab == tid] = new_id
        save_index_png(os.path.join(anno_dir, f"{t:05d}.png"), out)
    images_dir = os.path.join(mots_dir, "images")
    if os.path.isdir(images_dir):
        out_images = os.path.join(out_dir, "JPEGImages", sequence)
        os.makedirs(out_images, exist_ok=True)
        for fname in _frame_files(images_dir):
            with open(os.path.join(images_dir, fname), "rb") as src, \
                    open(os.path.join(out_images, fname), "wb") as dst:
                dst.write(src.read())
    with open(os.path.join(out_dir, "object_map.json"), "w") as fh:
        json.dump({str(k): v for k, v in mapping.items()}, fh, indent=2)
    return mapping


# ---- evaluation drivers ------------------------------------------------------

@dataclass
class DriverResult:
    sequence_id: str
    run: Optional[PipelineRun] = None
    predictions: dict = field(default_factory=dict)  # obj -> {frame -> BinaryMask}
    error: Optional[str] = None


def seed_points_for_datapoint(dp: VosDatapoint, config: PipelineConfig) -> dict:
    """Sample each object's query points from its seed mask; the mask goes no further."""
    seeds = {}
    for oid, first in dp.first_appearance.items():
        mask = dp.seed_masks[oid]
        frame = dp.video.frames[first]
        pos_seed = pipeline_mod.derive_seed(config.rng_seed, oid, 0, 1)
        points = list(sample_points(config.psm, mask, frame, config.positive_per_mask,
                                    pos_seed))
        if config.negative_per_mask > 0:
            neg_seed = pipeline_mod.derive_seed(config.rng_seed, oid, 0, 2)
            points.extend(sample_negative(oid, {oid: mask}, frame,
                                          config.negative_per_mask, neg_seed))
        seeds[oid] = Seed(frame_index=first, points=tuple(points))
    return seeds


def run_semisupervised(datapoints: Sequence[VosDatapoint], config: PipelineConfig,
                       tracker_factory, segmenter_factory) -> list[DriverResult]:
    """Semi-supervised protocol: only points sampled from the seed mask enter the run.

    ``tracker_factory(dp)`` / ``segmenter_factory(dp)`` build backends per
    sequence. Per-sequence failures are recorded, not raised, so one broken
    sequence cannot abort a batch.
    """
    results = []
    for dp in datapoints:
        try:
            seeds = seed_points_for_datapoint(dp, config)
            run = pipeline_mod.run(dp.video, seeds, config,
                                   tracker_factory(dp), segmenter_factory(dp))
            preds = {oid: run.masks(oid) for oid in seeds}
            results.append(DriverResult(dp.sequence_id, run=run, predictions=preds))
        except Exception as exc:  # noqa: BLE001 - batch isolation is the contract
            logger.exception("sequence %s failed", dp.sequence_id)
            results.append(DriverResult(dp.sequence_id, error=str(exc)))
    return results


def run_first_frame_proposals(video: VideoSequence, max_proposals: int,
                              config: PipelineConfig, tracker: TrackerBackend,
                              segmenter: SegmenterBackend) -> tuple[PipelineRun, dict]:
    """Segment-everything protocol: proposals on frame 0 become tracked objects.

    No proposals are generated on later frames, so objects entering the video
    after frame 0 are never picked up.
    """
    if not segmenter.capabilities.proposes_masks:
        raise UnsupportedCapabilityError("segmenter does not support mask proposals")
    proposals = segmenter.propose_masks(video.frames[0], max_proposals)
    seeds = {}
    proposal_masks = {}
    for i, mask in enumerate(proposals, start=1):
        seeds[i] = Seed(frame_index=0, mask=mask)
        proposal_masks[i] = mask
    if not seeds:
        return PipelineRun(config=config), {}
    run = pipeline_mod.run(video, seeds, config, tracker, segmenter)
    return run, proposal_masks
