"""
Center-cell target assignment.

Each ground-truth box is assigned to the grid cell containing its center.
When several centers share a cell the larger box wins; remaining ties are
broken by box content, so the table does not depend on GT order.
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from freqpriv.core.errors import ValidationError
from freqpriv.detection.boxes import BBox
from freqpriv.detection.model import STRIDE

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AssignmentTable:
    positive: np.ndarray  # (gh, gw) bool
    gt_index: np.ndarray  # (gh, gw) int, -1 for negatives
    class_ids: np.ndarray  # (gh, gw) int, -1 for negatives
    box_targets: np.ndarray  # (4, gh, gw) regressand targets, 0 for negatives

    @property
    def grid(self) -> Tuple[int, int]:
        return self.positive.shape  # type: ignore[return-value]

    @property
    def num_positives(self) -> int:
        return int(self.positive.sum())


def encode_box(
    box: BBox,
    row: int,
    col: int,
    stride: int = STRIDE,
    size_prior: float = 8.0,
) -> np.ndarray:
    """Inverse of the decoder's parametrization for the given cell."""
    cx, cy = box.center
    dx = cx / stride - (col + 0.5)
    dy = cy / stride - (row + 0.5)
    return np.array([
        np.arctanh(np.clip(dx, -0.999999, 0.999999)),
        np.arctanh(np.clip(dy, -0.999999, 0.999999)),
        np.log(box.w / size_prior),
        np.log(box.h / size_prior),
    ])


def _sort_key(item: Tuple[int, BBox]):
    _, b = item
    return (-b.area, b.x, b.y, b.w, b.h, b.class_id)


def assign_targets(
    gt: Sequence[BBox],
    grid: Tuple[int, int],
    stride: int = STRIDE,
    size_prior: float = 8.0,
) -> AssignmentTable:
    gh, gw = grid
    height, width = gh * stride, gw * stride

    positive = np.zeros((gh, gw), dtype=bool)
    gt_index = np.full((gh, gw), -1, dtype=np.int64)
    class_ids = np.full((gh, gw), -1, dtype=np.int64)
    box_targets = np.zeros((4, gh, gw))

    for idx, box in sorted(enumerate(gt), key=_sort_key):
        cx, cy = box.center
        if not (0.0 <= cx <= width and 0.0 <= cy <= height):
            raise ValidationError(
                f"GT box {idx} center ({cx:.2f}, {cy:.2f}) lies outside the "
                f"{width}×{height} image"
            )
        col = min(int(np.floor(cx / stride)), gw - 1)
        row = min(int(np.floor(cy / stride)), gh - 1)
        if positive[row, col]:
            logger.debug("GT %d loses cell (%d, %d) to a larger box", idx, row, col)
            continue
        positive[row, col] = True
        gt_index[row, col] = idx
        class_ids[row, col] = box.class_id
        box_targets[:, row, col] = encode_box(box, row, col, stride, size_prior)

    return AssignmentTable(positive, gt_index, class_ids, box_targets)
