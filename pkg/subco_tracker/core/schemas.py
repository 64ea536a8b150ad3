"""Defines the data structures shared by the data, training, tracking and evaluation code."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, NamedTuple, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixels, top-left corner plus size (MOTChallenge tlwh)."""
    x_left: float
    y_top: float
    width: float
    height: float

    def __post_init__(self):
        values = (self.x_left, self.y_top, self.width, self.height)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"Box coordinates must be finite, got {values}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"Box width and height must be positive, got {self.width}x{self.height}")

    @property
    def x_right(self) -> float:
        return self.x_left + self.width

    @property
    def y_bottom(self) -> float:
        return self.y_top + self.height

    def area(self) -> float:
        return self.width * self.height

    def to_tlwh(self) -> np.ndarray:
        return np.array([self.x_left, self.y_top, self.width, self.height], dtype=np.float64)

    def to_xyah(self) -> np.ndarray:
        """Center x, center y, aspect ratio (w/h), height: the Kalman measurement space."""
        return np.array([
            self.x_left + self.width / 2.0,
            self.y_top + self.height / 2.0,
            self.width / self.height,
            self.height,
        ], dtype=np.float64)

    @classmethod
    def from_xyah(cls, xyah) -> "BBox":
        cx, cy, aspect, height = (float(v) for v in xyah[:4])
        width = aspect * height
        return cls(cx - width / 2.0, cy - height / 2.0, width, height)

    def clip(self, image_width: float, image_height: float) -> Optional["BBox"]:
        """Returns the part of the box inside the image, or None if nothing is left."""
        x0 = max(0.0, self.x_left)
        y0 = max(0.0, self.y_top)
        x1 = min(float(image_width), self.x_right)
        y1 = min(float(image_height), self.y_bottom)
        if x1 <= x0 or y1 <= y0:
            return None
        return BBox(x0, y0, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class Detection:
    """One detector output (or one ground-truth box when gt_track_id is set)."""
    frame: int
    box: BBox
    confidence: float
    class_id: int = 1
    gt_track_id: Optional[int] = None

    def __post_init__(self):
        if self.frame < 1:
            raise ValueError(f"Frame index must be >= 1, got {self.frame}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"Confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class FrameDetections:
    """All detections of one frame. Position j is column j of every matrix built for this frame."""
    frame: int
    detections: Tuple[Detection, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        for det in self.detections:
            if det.frame != self.frame:
                raise ValueError(f"Detection of frame {det.frame} placed in frame {self.frame}")

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)

    def boxes(self) -> np.ndarray:
        """(K, 4) tlwh array."""
        if not self.detections:
            return np.zeros((0, 4), dtype=np.float64)
        return np.stack([det.box.to_tlwh() for det in self.detections])

    def confidences(self) -> np.ndarray:
        return np.array([det.confidence for det in self.detections], dtype=np.float64)

    def ids(self) -> List[Optional[int]]:
        return [det.gt_track_id for det in self.detections]


@dataclass(frozen=True, eq=False)
class SequenceSample:
    """T consecutive frames of detections, with the rendered frames when available."""
    frames: Tuple[FrameDetections, ...]
    images: Optional[Tuple[np.ndarray, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if len(self.frames) < 2:
            raise ValueError(f"A sequence sample needs at least 2 frames, got {len(self.frames)}")
        indices = [f.frame for f in self.frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError(f"Frame indices must be strictly increasing, got {indices}")
        if self.images is not None:
            object.__setattr__(self, "images", tuple(self.images))
            if len(self.images) != len(self.frames):
                raise ValueError(f"Got {len(self.images)} images for {len(self.frames)} frames")
            for image in self.images:
                if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
                    raise ValueError("Images must be height x width x 3 uint8 arrays")

    @property
    def length(self) -> int:
        return len(self.frames)


class TrackResult(NamedTuple):
    """One row of a tracking result file."""
    frame: int
    track_id: int
    box: BBox
    confidence: float


@dataclass(frozen=True, eq=False)
class CropFeature:
    """A detection crop resized to the patch size, flattened row-major RGB in [0, 1]."""
    values: np.ndarray
    patch_size: Tuple[int, int]

    def __post_init__(self):
        patch_w, patch_h = self.patch_size
        if self.values.shape != (patch_w * patch_h * 3,):
            raise ValueError(f"Crop of shape {self.values.shape} does not match patch {patch_w}x{patch_h}")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("Crop values must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """K x D ReID vectors of one frame, row k belonging to detection k."""
    rows: np.ndarray
    frame: int = 0

    def __post_init__(self):
        if self.rows.ndim != 2:
            raise ValueError(f"Embedding matrix must be 2-D, got shape {self.rows.shape}")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("Embedding matrix contains non-finite entries")

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True, eq=False)
class AssignmentResult:
    """Soft assignment between M tracks (rows) and K detections (columns)."""
    A: np.ndarray
    R: np.ndarray
    C: np.ndarray
    d: np.ndarray
    i: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.A.shape


@dataclass(frozen=True)
class LossBreakdown:
    """Loss terms of one sequence sample."""
    inter: float
    intra: float
    total: float
    alive_count: int
    skipped: bool = False


class TrackStatus(str, Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    LOST = "lost"
    REMOVED = "removed"


@dataclass(frozen=True, eq=False)
class KalmanState:
    """Mean (cx, cy, aspect, height and their velocities) and 8x8 covariance."""
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        if self.mean.shape != (8,) or self.covariance.shape != (8, 8):
            raise ValueError(f"Kalman state needs an 8-vector and 8x8 matrix, got {self.mean.shape}, {self.covariance.shape}")

    def to_box(self) -> BBox:
        return BBox.from_xyah(self.mean[:4])


@dataclass(eq=False)
class Track:
    """A track owned by one tracker instance."""
    id: int
    state: KalmanState
    reid_feature: np.ndarray
    confidence: float
    age: int = 0
    hits: int = 1
    status: TrackStatus = TrackStatus.TENTATIVE
    box_history: List[Tuple[int, BBox]] = field(default_factory=list)

    @property
    def predicted_box(self) -> BBox:
        return self.state.to_box()

    @property
    def is_open(self) -> bool:
        return self.status is not TrackStatus.REMOVED


@dataclass(frozen=True)
class FrameMatchLog:
    """CLEAR matching outcome of one frame: (gt_id, hyp_id, iou) matches plus error ids."""
    frame: int
    matches: Tuple[Tuple[int, int, float], ...]
    false_positives: Tuple[int, ...]
    misses: Tuple[int, ...]
    switches: Tuple[int, ...]


@dataclass
class ClearReport:
    mota: float
    motp: float
    fp: int
    fn: int
    idsw: int
    mt: int
    ml: int
    gt_total: int
    num_matches: int
    iou_sum: float
    num_gt_tracks: int
    frame_log: List[FrameMatchLog] = field(default_factory=list)


@dataclass
class IdentityReport:
    idf1: float
    idp: float
    idr: float
    idtp: int
    idfp: int
    idfn: int


@dataclass
class HotaReport:
    """Scalars are means over the alpha grid; the *_curve lists hold one value per alpha."""
    hota: float
    deta: float
    assa: float
    loca: float
    alphas: List[float]
    hota_curve: List[float]
    deta_curve: List[float]
    assa_curve: List[float]
    loca_curve: List[float]
    # Raw per-alpha sums, kept so reports of several sequences can be merged.
    tp: List[int] = field(default_factory=list)
    fn: List[int] = field(default_factory=list)
    fp: List[int] = field(default_factory=list)
    ass_sum: List[float] = field(default_factory=list)
    loc_sum: List[float] = field(default_factory=list)
