"""Point-centric video object segmentation engine.

Sparse labelled points are tracked through a video and prompt a promptable
segmenter per frame; the package adds query-point sampling, reinitialization,
VOS metrics, dataset drivers, interaction simulation, a backend wire protocol,
and an annotation service on top.
"""
from .core import (BinaryMask, Frame, LabeledPoint, MaskPrediction, ObjectId,
                   PipelineConfig, PointLabel, TrajectoryBundle, VideoSequence,
                   mask_area, resize_longest_side)
from .pipeline import PipelineRun, Seed, run, two_pass_segment

__all__ = [
    "BinaryMask", "Frame", "LabeledPoint", "MaskPrediction", "ObjectId",
    "PipelineConfig", "PipelineRun", "PointLabel", "Seed", "TrajectoryBundle",
    "VideoSequence", "mask_area", "resize_longest_side", "run", "two_pass_segment",
]

__version__ = "0.1.0"
