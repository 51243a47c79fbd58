"""Core value types: frames, masks, points, trajectories, and pipeline configuration.

All containers are immutable after construction (numpy buffers are marked
read-only) and therefore safe to share across threads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .errors import InvalidInputError

ObjectId = int

POINT_SAMPLING_METHODS = ("random", "kmedoids", "shi_tomasi", "mixed")
REINIT_VARIANTS = ("off", "A", "B", "C", "D")


class PointLabel(IntEnum):
    NEGATIVE = 0
    POSITIVE = 1


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Frame:
    """A single RGB video frame, row-major uint8 with pixel (x, y) addressed as pixels[y, x]."""

    index: int
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        if self.index < 0:
            raise InvalidInputError(f"frame index must be non-negative, got {self.index}")
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidInputError(f"pixels must have shape (h, w, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidInputError("frame must be at least 1x1")
        object.__setattr__(self, "pixels", _freeze(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    """A row-major boolean pixel mask."""

    data: np.ndarray  # (height, width) bool

    def __post_init__(self):
        d = np.asarray(self.data, dtype=bool)
        if d.ndim != 2:
            raise InvalidInputError(f"mask must be 2D, got shape {d.shape}")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def area(self) -> int:
        return int(self.data.sum())

    def is_empty(self) -> bool:
        return not self.data.any()

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))


def mask_area(mask: BinaryMask) -> int:
    """Number of set bits in the mask."""
    return mask.area()


@dataclass(frozen=True)
class LabeledPoint:
    """A continuous-coordinate prompt point tied to one object."""

    x: float
    y: float
    label: PointLabel
    object_id: ObjectId = 1

    def is_positive(self) -> bool:
        return self.label == PointLabel.POSITIVE


@dataclass(frozen=True)
class TrajectoryBundle:
    """Per-point positions and occlusion scores over a contiguous frame span.

    positions[t, i] is the (x, y) location of point i at frame start_frame + t,
    occlusion[t, i] in [0, 1] scores how likely the point is not visible.
    Row 0 always restates the query points exactly.
    """

    start_frame: int
    positions: np.ndarray  # (T, N, 2) float64
    occlusion: np.ndarray  # (T, N) float64
    labels: np.ndarray  # (N,) int8, PointLabel values
    objects: np.ndarray  # (N,) int64

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        occ = np.asarray(self.occlusion, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int8)
        objects = np.asarray(self.objects, dtype=np.int64)
        if pos.ndim != 3 or pos.shape[2] != 2:
            raise InvalidInputError(f"positions must be (T, N, 2), got {pos.shape}")
        t, n = pos.shape[:2]
        if occ.shape != (t, n):
            raise InvalidInputError(f"occlusion shape {occ.shape} != {(t, n)}")
        if labels.shape != (n,) or objects.shape != (n,):
            raise InvalidInputError("labels/objects must have one entry per point")
        if occ.size and (occ.min() < 0.0 or occ.max() > 1.0):
            raise InvalidInputError("occlusion scores must lie in [0, 1]")
        for name, arr in (("positions", pos), ("occlusion", occ), ("labels", labels), ("objects", objects)):
            object.__setattr__(self, name, _freeze(arr))

    @property
    def num_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def num_points(self) -> int:
        return self.positions.shape[1]

    def frame_points(self, frame_index: int, occlusion_threshold: float = 0.5,
                     include_occluded: bool = False) -> list[LabeledPoint]:
        """Points at an absolute frame index, dropping occluded ones unless asked."""
        t = frame_index - self.start_frame
        if not 0 <= t < self.num_frames:
            raise InvalidInputError(f"frame {frame_index} outside bundle span")
        out = []
        for i in range(self.num_points):
            if not include_occluded and self.occlusion[t, i] >= occlusion_threshold:
                continue
            out.append(LabeledPoint(
                x=float(self.positions[t, i, 0]), y=float(self.positions[t, i, 1]),
                label=PointLabel(int(self.labels[i])), object_id=int(self.objects[i]),
            ))
        return out

    @classmethod
    def from_queries(cls, start_frame: int, queries: Sequence[LabeledPoint],
                     positions: np.ndarray, occlusion: np.ndarray) -> "TrajectoryBundle":
        labels = np.array([int(q.label) for q in queries], dtype=np.int8)
        objects = np.array([q.object_id for q in queries], dtype=np.int64)
        return cls(start_frame=start_frame, positions=positions, occlusion=occlusion,
                   labels=labels, objects=objects)


@dataclass(frozen=True)
class MaskPrediction:
    """A predicted object mask for one frame, plus an opaque re-prompting handle."""

    mask: BinaryMask
    object_id: ObjectId
    frame_index: int
    dense_prior: object = None
    flagged: bool = False  # set when no visible positive point was available


@dataclass
class PipelineConfig:
    """Tunable knobs of the point-propagation segmentation pipeline."""

    psm: str = "kmedoids"  # point selection method
    positive_per_mask: int = 8
    negative_per_mask: int = 1
    refinement_iterations: int = 12
    patch_similarity_threshold: Optional[float] = None
    reinit: str = "off"
    horizon: int = 8
    occlusion_threshold: float = 0.5
    rng_seed: int = 0
    reinit_area_band: float = 0.25  # relative area tolerance for variants C/D
    cross_object_negatives: bool = True

    def __post_init__(self):
        if self.psm not in POINT_SAMPLING_METHODS:
            raise InvalidInputError(f"unknown point selection method {self.psm!r}")
        if self.reinit not in REINIT_VARIANTS:
            raise InvalidInputError(f"unknown reinit variant {self.reinit!r}")
        if self.positive_per_mask < 1:
            raise InvalidInputError("positive_per_mask must be >= 1")
        if self.negative_per_mask < 0:
            raise InvalidInputError("negative_per_mask must be >= 0")
        if self.refinement_iterations < 0:
            raise InvalidInputError("refinement_iterations must be >= 0")
        if self.horizon < 1:
            raise InvalidInputError("horizon must be >= 1")
        if not 0.0 <= self.occlusion_threshold <= 1.0:
            raise InvalidInputError("occlusion_threshold must lie in [0, 1]")
        if self.patch_similarity_threshold is not None and self.patch_similarity_threshold <= 0:
            raise InvalidInputError("patch_similarity_threshold must be > 0")
        if self.reinit != "off" and self.negative_per_mask < 1:
            raise InvalidInputError("reinitialization requires at least one negative point per mask")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class VideoSequence:
    """Ordered frames with optional per-object ground-truth masks per frame."""

    name: str
    frames: tuple[Frame, ...]
    gt_masks: dict = field(default_factory=dict)  # ObjectId -> tuple[BinaryMask | None, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise InvalidInputError("a video needs at least one frame")
        for obj, masks in self.gt_masks.items():
            if len(masks) != len(frames):
                raise InvalidInputError(f"object {obj} has {len(masks)} GT masks for {len(frames)} frames")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "gt_masks", dict(self.gt_masks))

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def first_appearance(self, object_id: ObjectId) -> Optional[int]:
        """Earliest frame whose GT mask for the object is non-empty."""
        masks = self.gt_masks.get(object_id)
        if masks is None:
            return None
        for t, m in enumerate(masks):
            if m is not None and not m.is_empty():
                return t
        return None


def resize_longest_side(frame: Frame, target: int) -> tuple[Frame, tuple[float, float]]:
    """Resize a frame so its longest side equals ``target``, preserving aspect ratio.

    The short side becomes round(short * target / long), floored at one pixel.
    Returns the resized frame and the (sx, sy) factors that map resized
    coordinates back to the original frame: x_orig = x_resized * sx.
    """
    if target < 1:
        raise InvalidInputError("resize target must be >= 1")
    w, h = frame.width, frame.height
    if w >= h:
        new_w = target
        new_h = max(1, int(round(h * target / w)))
    else:
        new_h = target
        new_w = max(1, int(round(w * target / h)))
    if (new_w, new_h) == (w, h):
        return frame, (1.0, 1.0)
    img = Image.fromarray(np.asarray(frame.pixels))
    resized = img.resize((new_w, new_h), resample=Image.BILINEAR)
    out = Frame(index=frame.index, pixels=np.asarray(resized, dtype=np.uint8))
    return out, (w / new_w, h / new_h)


def resize_mask(mask: BinaryMask, width: int, height: int) -> BinaryMask:
    """Nearest-neighbour mask resize (used to map predictions between resolutions)."""
    if (mask.width, mask.height) == (width, height):
        return mask
    img = Image.fromarray(mask.data.astype(np.uint8) * 255)
    out = img.resize((width, height), resample=Image.NEAREST)
    return BinaryMask(np.asarray(out) > 127)
