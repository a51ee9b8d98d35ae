"""
Head-map decoding.

Per cell (i, j):
    score  = sigmoid(objectness) · max softmax(class logits)
    cx, cy = (j + 0.5 + tanh(tx))·stride, (i + 0.5 + tanh(ty))·stride
    w, h   = prior·exp(tw), prior·exp(th)
Boxes are clamped to the image, cells with score <= threshold are dropped,
then greedy same-class NMS runs.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.special import expit, softmax

from freqpriv.core.errors import ShapeError
from freqpriv.detection.boxes import BBox, nms
from freqpriv.detection.model import STRIDE

logger = logging.getLogger(__name__)

DEFAULT_NMS_IOU = 0.6
# exp() argument bound for size regressands
MAX_LOG_SCALE = 8.0


@dataclass
class CellPredictions:
    """Every cell's decoded (clamped) box, flattened row-major."""

    boxes: np.ndarray  # (n, 4) x, y, w, h; rows with w or h == 0 are invalid
    scores: np.ndarray  # (n,)
    class_ids: np.ndarray  # (n,)
    objectness: np.ndarray  # (n,)

    @property
    def valid(self) -> np.ndarray:
        return (self.boxes[:, 2] > 0) & (self.boxes[:, 3] > 0)


def split_head(head: np.ndarray, num_classes: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    head = np.asarray(head, dtype=np.float64)
    if head.ndim != 3 or head.shape[0] != 1 + num_classes + 4:
        raise ShapeError(f"Head map {head.shape} does not have 1 + {num_classes} + 4 channels")
    return head[0], head[1:1 + num_classes], head[1 + num_classes:]


def regressands_to_boxes(
    reg: np.ndarray,
    stride: int = STRIDE,
    size_prior: float = 8.0,
) -> np.ndarray:
    """(4, gh, gw) regressands to unclamped (gh, gw, 4) [x, y, w, h] pixels."""
    _, gh, gw = reg.shape
    rows, cols = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
    cx = (cols + 0.5 + np.tanh(reg[0])) * stride
    cy = (rows + 0.5 + np.tanh(reg[1])) * stride
    w = size_prior * np.exp(np.clip(reg[2], -MAX_LOG_SCALE, MAX_LOG_SCALE))
    h = size_prior * np.exp(np.clip(reg[3], -MAX_LOG_SCALE, MAX_LOG_SCALE))
    return np.stack([cx - w / 2.0, cy - h / 2.0, w, h], axis=-1)


def clamp_array(boxes: np.ndarray, width: float, height: float) -> np.ndarray:
    x1 = np.clip(boxes[..., 0], 0.0, width)
    y1 = np.clip(boxes[..., 1], 0.0, height)
    x2 = np.clip(boxes[..., 0] + boxes[..., 2], 0.0, width)
    y2 = np.clip(boxes[..., 1] + boxes[..., 3], 0.0, height)
    return np.stack([x1, y1, x2 - x1, y2 - y1], axis=-1)


def decode_cells(
    head: np.ndarray,
    num_classes: int,
    image_dims: Tuple[int, int],
    stride: int = STRIDE,
    size_prior: float = 8.0,
) -> CellPredictions:
    """Decode every cell without thresholding or NMS."""
    obj, cls_logits, reg = split_head(head, num_classes)
    height, width = image_dims
    boxes = clamp_array(regressands_to_boxes(reg, stride, size_prior), width, height)

    objectness = expit(obj)
    probs = softmax(cls_logits, axis=0)
    class_ids = np.argmax(probs, axis=0)
    scores = objectness * np.max(probs, axis=0)
    return CellPredictions(
        boxes=boxes.reshape(-1, 4),
        scores=scores.reshape(-1),
        class_ids=class_ids.reshape(-1),
        objectness=objectness.reshape(-1),
    )


def decode(
    head: np.ndarray,
    score_threshold: float,
    image_dims: Tuple[int, int],
    num_classes: int,
    nms_iou: float = DEFAULT_NMS_IOU,
    stride: int = STRIDE,
    size_prior: float = 8.0,
) -> List[BBox]:
    """Thresholded, NMS-filtered detections sorted by descending score."""
    if not 0.0 <= score_threshold <= 1.0:
        raise ValueError(f"score_threshold must be in [0, 1], got {score_threshold}")
    cells = decode_cells(head, num_classes, image_dims, stride, size_prior)
    keep = cells.valid & (cells.scores > score_threshold)

    candidates = [
        BBox(
            x=float(b[0]), y=float(b[1]), w=float(b[2]), h=float(b[3]),
            class_id=int(c), score=float(s),
        )
        for b, c, s in zip(cells.boxes[keep], cells.class_ids[keep], cells.scores[keep])
    ]
    return nms(candidates, nms_iou)
