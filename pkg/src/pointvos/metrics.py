"""Region similarity (J), contour accuracy (F), and sequence aggregation.

J is plain intersection-over-union. F matches boundary pixels between
prediction and ground truth within a pixel tolerance; matching is computed
through an exact Euclidean distance field, which is equivalent to dilating
with a true disk structuring element.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .core import BinaryMask
from .errors import InvalidInputError

VISIBILITY_BUCKETS = (("short", 1, 5), ("medium", 6, 30), ("long", 31, None))

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def _check_same_shape(pred: BinaryMask, gt: BinaryMask) -> None:
    if pred.data.shape != gt.data.shape:
        raise InvalidInputError(
            f"mask dimensions differ: {pred.data.shape} vs {gt.data.shape}")


def region_j(pred: BinaryMask, gt: BinaryMask) -> float:
    """Intersection over union; two empty masks count as a perfect match."""
    _check_same_shape(pred, gt)
    union = np.logical_or(pred.data, gt.data).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred.data, gt.data).sum() / union)


def boundary_map(mask: BinaryMask) -> np.ndarray:
    """Mask pixels with a 4-neighbour outside the mask; image border counts as outside."""
    eroded = ndimage.binary_erosion(mask.data, structure=_CROSS, border_value=0)
    return mask.data & ~eroded


def default_tolerance(width: int, height: int) -> int:
    """Boundary matching tolerance: 0.8% of the image diagonal, rounded up."""
    return int(math.ceil(0.008 * math.hypot(width, height)))


def contour_f(pred: BinaryMask, gt: BinaryMask, tolerance: Optional[float] = None) -> float:
    """Boundary F-measure: harmonic mean of boundary precision and recall.

    A boundary pixel matches when some counterpart boundary pixel lies within
    ``tolerance`` (Euclidean). Both boundaries empty scores 1.0, exactly one
    empty scores 0.0.
    """
    _check_same_shape(pred, gt)
    if tolerance is None:
        tolerance = default_tolerance(pred.width, pred.height)
    if tolerance < 0:
        raise InvalidInputError("tolerance must be >= 0")
    pb = boundary_map(pred)
    gb = boundary_map(gt)
    if not pb.any() and not gb.any():
        return 1.0
    if not pb.any() or not gb.any():
        return 0.0
    dist_to_gt = ndimage.distance_transform_edt(~gb)
    dist_to_pred = ndimage.distance_transform_edt(~pb)
    precision = float((dist_to_gt[pb] <= tolerance).mean())
    recall = float((dist_to_pred[gb] <= tolerance).mean())
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def visibility_bucket(visible_frames: int) -> str:
    """Bucket an object by how many frames its ground truth is non-empty."""
    for name, lo, hi in VISIBILITY_BUCKETS:
        if visible_frames >= lo and (hi is None or visible_frames <= hi):
            return name
    return "short"


@dataclass
class ObjectScore:
    object_id: int
    first_frame: int
    per_frame_j: dict = field(default_factory=dict)  # frame -> J
    per_frame_f: dict = field(default_factory=dict)
    missing_frames: list = field(default_factory=list)
    bucket: str = "short"

    @property
    def j_mean(self) -> float:
        return float(np.mean(list(self.per_frame_j.values()))) if self.per_frame_j else float("nan")

    @property
    def f_mean(self) -> float:
        return float(np.mean(list(self.per_frame_f.values()))) if self.per_frame_f else float("nan")

    @property
    def jf(self) -> float:
        return (self.j_mean + self.f_mean) / 2.0


@dataclass
class SequenceScore:
    name: str
    objects: dict = field(default_factory=dict)  # object id -> ObjectScore

    @property
    def jf(self) -> float:
        vals = [o.jf for o in self.objects.values() if not math.isnan(o.jf)]
        return float(np.mean(vals)) if vals else float("nan")


def score_sequence(name: str, predictions: dict, gt_masks: dict,
                   tolerance: Optional[float] = None) -> SequenceScore:
    """Score one sequence; skips each object's first annotated frame.

    ``predictions``: object id -> {frame -> BinaryMask}; ``gt_masks``:
    object id -> sequence of BinaryMask (or None before annotation starts).
    Missing predictions score zero and are flagged.
    """
    seq = SequenceScore(name=name)
    for oid, gt_series in gt_masks.items():
        first = None
        visible = 0
        for t, m in enumerate(gt_series):
            if m is not None and not m.is_empty():
                visible += 1
                if first is None:
                    first = t
        if first is None:
            continue
        obj = ObjectScore(object_id=oid, first_frame=first,
                          bucket=visibility_bucket(visible))
        preds = predictions.get(oid, {})
        for t in range(first + 1, len(gt_series)):
            gt = gt_series[t]
            if gt is None:
                gt = BinaryMask.zeros(gt_series[first].width, gt_series[first].height)
            pred = preds.get(t)
            if pred is None:
                obj.per_frame_j[t] = 0.0
                obj.per_frame_f[t] = 0.0
                obj.missing_frames.append(t)
                continue
            obj.per_frame_j[t] = region_j(pred, gt)
            obj.per_frame_f[t] = contour_f(pred, gt, tolerance)
        seq.objects[oid] = obj
    return seq


def aggregate(sequence_scores: list) -> dict:
    """Dataset-level means over objects, plus per-visibility-bucket means."""
    all_objects = [(s.name, o) for s in sequence_scores for o in s.objects.values()
                   if o.per_frame_j]
    j_vals = [o.j_mean for _, o in all_objects]
    f_vals = [o.f_mean for _, o in all_objects]
    jf_vals = [o.jf for _, o in all_objects]
    buckets = {}
    for name, _, _ in VISIBILITY_BUCKETS:
        vals = [o.jf for _, o in all_objects if o.bucket == name]
        buckets[name] = float(np.mean(vals)) if vals else None
    return {
        "num_objects": len(all_objects),
        "J": float(np.mean(j_vals)) if j_vals else None,
        "F": float(np.mean(f_vals)) if f_vals else None,
        "JF": float(np.mean(jf_vals)) if jf_vals else None,
        "buckets": buckets,
        "sequences": {
            s.name: {
                "JF": s.jf if s.objects else None,
                "objects": {
                    str(o.object_id): {
                        "J": o.j_mean, "F": o.f_mean, "JF": o.jf,
                        "bucket": o.bucket,
                        "missing_frames": list(o.missing_frames),
                    } for o in s.objects.values()
                },
            } for s in sequence_scores
        },
    }
