"""
Axis-aligned boxes in image pixels (x, y = top-left; w, h = extent), IoU and
greedy same-class non-maximum suppression.
"""

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from freqpriv.core.errors import ValidationError


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float
    class_id: int = 0
    score: Optional[float] = None

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValidationError(f"Box extent must be positive, got w={self.w}, h={self.h}")
        if not np.all(np.isfinite([self.x, self.y, self.w, self.h])):
            raise ValidationError("Box coordinates must be finite")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"Box score must be in [0, 1], got {self.score}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> Tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    def xyxy(self) -> Tuple[float, float, float, float]:
        return self.x, self.y, self.x + self.w, self.y + self.h

    def to_list(self) -> List[float]:
        return [self.x, self.y, self.w, self.h]

    def with_score(self, score: float) -> "BBox":
        return replace(self, score=score)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ax1, ay1, ax2, ay2 = a.xyxy()
    bx1, by1, bx2, by2 = b.xyxy()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Pairwise IoU of two (n, 4) arrays of [x, y, w, h] rows.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = bx1 + b[:, 2], by1 + b[:, 3]

    iw = np.clip(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0.0, None)
    ih = np.clip(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0.0, None)
    inter = iw * ih
    union = (a[:, 2:3] * a[:, 3:4]) + (b[:, 2] * b[:, 3]) - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def boxes_to_array(boxes: Sequence[BBox]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4))
    return np.array([b.to_list() for b in boxes], dtype=np.float64)


def nms(boxes: Sequence[BBox], iou_threshold: float = 0.6) -> List[BBox]:
    """
    Greedy same-class NMS.

    Boxes are visited by descending score (ties keep input order); a box is
    dropped when its IoU with an already kept box of the same class exceeds
    ``iou_threshold``.
    """
    if not boxes:
        return []
    scores = np.array([b.score if b.score is not None else 0.0 for b in boxes])
    order = np.argsort(-scores, kind="stable")
    coords = boxes_to_array(boxes)

    kept: List[int] = []
    for idx in order:
        box = boxes[idx]
        same = [k for k in kept if boxes[k].class_id == box.class_id]
        if same:
            overlaps = iou_matrix(coords[idx], coords[same])[0]
            if np.any(overlaps > iou_threshold):
                continue
        kept.append(int(idx))
    return [boxes[k] for k in kept]


def greedy_match(
    ious: np.ndarray,
    threshold: float,
) -> List[Tuple[int, int]]:
    """
    Highest-IoU-first one-to-one matching of rows to columns.

    Returns (row, col) pairs with IoU >= threshold; ties are broken by the
    lower row, then the lower column.
    """
    ious = np.array(ious, dtype=np.float64, copy=True)
    pairs: List[Tuple[int, int]] = []
    if ious.size == 0:
        return pairs
    while True:
        flat = int(np.argmax(ious))
        r, c = divmod(flat, ious.shape[1])
        if ious[r, c] < threshold or ious[r, c] < 0:
            break
        pairs.append((r, c))
        ious[r, :] = -1.0
        ious[:, c] = -1.0
    return pairs
