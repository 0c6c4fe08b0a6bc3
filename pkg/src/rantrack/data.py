"""Boxes, detections and per-frame containers shared by all stages."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class Box:
    """Axis-aligned box: top-left corner plus width and height, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InvalidArgumentError(f"box extents must be positive, got w={self.w} h={self.h}")

    @classmethod
    def from_center(cls, cx, cy, w, h):
        return cls(float(cx - w / 2.0), float(cy - h / 2.0), float(w), float(h))

    @property
    def cx(self):
        return self.x + self.w / 2.0

    @property
    def cy(self):
        return self.y + self.h / 2.0

    @property
    def diagonal(self):
        return math.hypot(self.w, self.h)

    @property
    def area(self):
        return self.w * self.h

    def as_tuple(self):
        return (self.x, self.y, self.w, self.h)


def iou(a, b):
    """Intersection over union of two boxes."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    # rounding can push identical boxes a few ulps above 1
    return min(inter / (a.area + b.area - inter), 1.0)


@dataclass(frozen=True, eq=False)
class Detection:
    frame: int
    box: Box
    confidence: float = 1.0
    appearance: np.ndarray = None

    def with_appearance(self, feature):
        return Detection(self.frame, self.box, self.confidence, np.asarray(feature, dtype=np.float64))


@dataclass(frozen=True)
class GtEntry:
    gt_id: int
    box: Box
    visible: bool = True


@dataclass
class GroundTruth:
    """Ground-truth boxes keyed by 1-based frame number."""

    frames: dict = field(default_factory=dict)
    num_frames: int = 0

    def __post_init__(self):
        for frame, entries in self.frames.items():
            ids = [e.gt_id for e in entries]
            if len(ids) != len(set(ids)):
                raise InvalidArgumentError(f"duplicate gt id in frame {frame}")
        if self.frames:
            self.num_frames = max(self.num_frames, max(self.frames))

    def entries(self, frame):
        return self.frames.get(frame, [])

    def ids(self):
        return sorted({e.gt_id for entries in self.frames.values() for e in entries})

    def trajectories(self):
        """``{gt_id: [(frame, GtEntry), ...]}`` in frame order."""
        out = {}
        for frame in sorted(self.frames):
            for e in self.frames[frame]:
                out.setdefault(e.gt_id, []).append((frame, e))
        return out

    def total_visible(self):
        return sum(e.visible for entries in self.frames.values() for e in entries)


@dataclass
class DetectionSet:
    """Detections keyed by 1-based frame; within-frame order is file order."""

    frames: dict = field(default_factory=dict)
    num_frames: int = 0
    skipped: int = 0

    def __post_init__(self):
        if self.frames:
            self.num_frames = max(self.num_frames, max(self.frames))

    def in_frame(self, frame):
        return self.frames.get(frame, [])

    def __len__(self):
        return sum(len(v) for v in self.frames.values())

    def iter_frames(self):
        """``(frame, detections)`` for every frame 1..num_frames, empty ones included."""
        for frame in range(1, self.num_frames + 1):
            yield frame, self.frames.get(frame, [])
