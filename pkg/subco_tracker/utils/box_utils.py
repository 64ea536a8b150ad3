"""Utility functions for bounding boxes."""

import numpy as np

from subco_tracker.core.schemas import BBox


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes in continuous pixel coordinates."""
    inter_w = min(a.x_right, b.x_right) - max(a.x_left, b.x_left)
    inter_h = min(a.y_bottom, b.y_bottom) - max(a.y_top, b.y_top)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    return inter / (a.area() + b.area() - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    a: (N, 4) tlwh, b: (M, 4) tlwh
    returns IoU (N, M)
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)

    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[:, 0][None, :], b[:, 1][None, :]
    bx2, by2 = bx1 + b[:, 2][None, :], by1 + b[:, 3][None, :]

    inter_w = np.maximum(0.0, np.minimum(ax2, bx2) - np.maximum(ax1, bx1))
    inter_h = np.maximum(0.0, np.minimum(ay2, by2) - np.maximum(ay1, by1))
    inter = inter_w * inter_h

    union = a[:, 2:3] * a[:, 3:4] + (b[:, 2] * b[:, 3])[None, :] - inter
    return inter / np.maximum(union, 1e-12)


def covered_fraction(box: BBox, mask: np.ndarray) -> float:
    """Fraction of the box's pixels set in a boolean (height, width) mask."""
    clipped = box.clip(mask.shape[1], mask.shape[0])
    if clipped is None:
        return 0.0
    x0, y0 = int(np.floor(clipped.x_left)), int(np.floor(clipped.y_top))
    x1, y1 = int(np.ceil(clipped.x_right)), int(np.ceil(clipped.y_bottom))
    region = mask[y0:y1, x0:x1]
    if region.size == 0:
        return 0.0
    return float(region.mean())
