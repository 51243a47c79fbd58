import numpy as np
import pytest

from pointvos.backends import SegmenterBackend, TrackerBackend
from pointvos.core import BinaryMask, Frame
from pointvos import synthetic


def make_frame(width=32, height=32, color=(128, 128, 128), index=0):
    px = np.empty((height, width, 3), dtype=np.uint8)
    px[:] = color
    return Frame(index=index, pixels=px)


def mask_from_bits(rows):
    """Build a mask from an iterable of 0/1 strings, one per row."""
    return BinaryMask(np.array([[c == "1" for c in row] for row in rows], dtype=bool))


def disk_mask(width, height, cx, cy, r):
    ys, xs = np.mgrid[0:height, 0:width]
    return BinaryMask((xs - cx) ** 2 + (ys - cy) ** 2 <= r * r)


def rect_mask(width, height, x0, y0, x1, y1):
    data = np.zeros((height, width), dtype=bool)
    data[y0:y1, x0:x1] = True
    return BinaryMask(data)


class CountingSegmenter(SegmenterBackend):
    """Delegates to a real segmenter while recording every prompt."""

    def __init__(self, inner):
        self.inner = inner
        self.capabilities = inner.capabilities
        self.calls = []  # (frame_index, points, had_prior)

    def segment(self, frame, points, prior=None):
        self.calls.append((frame.index, list(points), prior is not None))
        return self.inner.segment(frame, points, prior=prior)

    def propose_masks(self, frame, max_proposals):
        return self.inner.propose_masks(frame, max_proposals)


class CountingTracker(TrackerBackend):
    def __init__(self, inner, window_size=None):
        self.inner = inner
        caps = inner.capabilities
        if window_size is not None:
            from pointvos.backends import TrackerCapabilities
            caps = TrackerCapabilities(predicts_occlusion=caps.predicts_occlusion,
                                       window_size=window_size)
        self.capabilities = caps
        self.calls = []  # (first_index, num_frames, num_queries)

    def track(self, frames, queries):
        self.calls.append((frames[0].index, len(frames), len(queries)))
        return self.inner.track(frames, queries)


@pytest.fixture
def gliding_scene():
    return synthetic.acceptance_suite()[1]


@pytest.fixture
def trio_scene():
    return synthetic.acceptance_suite()[5]
