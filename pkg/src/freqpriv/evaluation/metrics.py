"""
COCO-style detection metrics.

Matching per (image, class): detections in descending score order each
take the unmatched GT with the highest IoU >= threshold. For a size bucket,
GTs outside the bucket are "ignored": detections matched to them count as
neither TP nor FP, and unmatched detections outside the bucket are ignored
too. AP is the 101-point interpolated area under the precision envelope,
averaged over classes that have at least one in-scope GT.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from freqpriv.detection.boxes import iou_matrix

logger = logging.getLogger(__name__)

RECALL_GRID = np.linspace(0.0, 1.0, 101)
IOU_THRESHOLDS = np.round(np.arange(0.5, 0.951, 0.05), 2)
SIZE_BUCKETS: Dict[str, Tuple[float, float]] = {
    "all": (0.0, np.inf),
    "small": (0.0, 32.0 ** 2),
    "medium": (32.0 ** 2, 96.0 ** 2),
    "large": (96.0 ** 2, np.inf),
}

PRED_COLUMNS = ["image_id", "category_id", "x", "y", "w", "h", "score"]
GT_COLUMNS = ["image_id", "category_id", "x", "y", "w", "h"]


def in_bucket(area: np.ndarray, bucket: str) -> np.ndarray:
    """small: area < 32², medium: 32² <= area <= 96², large: area > 96²."""
    lo, hi = SIZE_BUCKETS[bucket]
    area = np.asarray(area, dtype=np.float64)
    if bucket == "all":
        return np.ones(area.shape, dtype=bool)
    if bucket == "small":
        return area < hi
    if bucket == "medium":
        return (area >= lo) & (area <= hi)
    return area > lo


@dataclass
class MatchResult:
    """Per-detection outcome for one class, pooled over images."""

    scores: np.ndarray
    tp: np.ndarray  # bool
    ignored: np.ndarray  # bool
    n_gt: int  # in-scope GT count


def _xywh(frame: pd.DataFrame) -> np.ndarray:
    return frame[["x", "y", "w", "h"]].to_numpy(dtype=np.float64).reshape(-1, 4)


def match_image(
    det_boxes: np.ndarray,
    det_scores: np.ndarray,
    gt_boxes: np.ndarray,
    iou_threshold: float,
    bucket: str = "all",
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """
    Greedy matching for one image and one class.

    Returns (det order, tp flags, ignore flags, in-scope GT count), flags
    aligned with the score-sorted order.
    """
    order = np.argsort(-det_scores, kind="mergesort")
    det_boxes = det_boxes[order]
    gt_ignore = ~in_bucket(gt_boxes[:, 2] * gt_boxes[:, 3], bucket) if len(gt_boxes) else np.zeros(0, bool)
    # in-scope GTs first so they are preferred
    gt_order = np.argsort(gt_ignore, kind="mergesort")
    gt_boxes = gt_boxes[gt_order]
    gt_ignore = gt_ignore[gt_order]

    n_det, n_gt = len(det_boxes), len(gt_boxes)
    tp = np.zeros(n_det, dtype=bool)
    ignored = np.zeros(n_det, dtype=bool)
    if n_det and n_gt:
        ious = iou_matrix(det_boxes, gt_boxes)
        taken = np.zeros(n_gt, dtype=bool)
        for d in range(n_det):
            best, match = iou_threshold, -1
            for g in range(n_gt):
                if taken[g]:
                    continue
                if match > -1 and not gt_ignore[match] and gt_ignore[g]:
                    break
                if ious[d, g] < best:
                    continue
                best, match = ious[d, g], g
            if match > -1:
                taken[match] = True
                if gt_ignore[match]:
                    ignored[d] = True
                else:
                    tp[d] = True
    if n_det:
        outside = ~in_bucket(det_boxes[:, 2] * det_boxes[:, 3], bucket)
        ignored |= ~tp & ~ignored & outside
    return order, tp, ignored, int((~gt_ignore).sum())


def match_class(
    preds: pd.DataFrame,
    gts: pd.DataFrame,
    iou_threshold: float,
    bucket: str = "all",
) -> MatchResult:
    """Match one class's predictions against its GTs over all images."""
    scores, tps, ignores = [], [], []
    n_gt = 0
    pred_groups = dict(tuple(preds.groupby("image_id", sort=True)))
    gt_groups = dict(tuple(gts.groupby("image_id", sort=True)))
    for image_id in sorted(set(pred_groups) | set(gt_groups)):
        p = pred_groups.get(image_id, preds.iloc[0:0])
        g = gt_groups.get(image_id, gts.iloc[0:0])
        det_scores = p["score"].to_numpy(dtype=np.float64)
        order, tp, ignored, n_scope = match_image(_xywh(p), det_scores, _xywh(g), iou_threshold, bucket)
        scores.append(det_scores[order])
        tps.append(tp)
        ignores.append(ignored)
        n_gt += n_scope
    if not scores:
        return MatchResult(np.zeros(0), np.zeros(0, bool), np.zeros(0, bool), 0)
    return MatchResult(np.concatenate(scores), np.concatenate(tps), np.concatenate(ignores), n_gt)


def interpolated_ap(match: MatchResult) -> Optional[float]:
    """101-point interpolated AP; None when no GT is in scope."""
    if match.n_gt == 0:
        return None
    keep = ~match.ignored
    order = np.argsort(-match.scores[keep], kind="mergesort")
    tp = match.tp[keep][order]
    if tp.size == 0:
        return 0.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    recall = tp_cum / match.n_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, np.finfo(np.float64).eps)
    # precision envelope: max precision at any recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def _by_class(frame: pd.DataFrame) -> Dict[int, pd.DataFrame]:
    return {int(k): v for k, v in frame.groupby("category_id", sort=True)}


def average_precision(
    preds: pd.DataFrame,
    gts: pd.DataFrame,
    iou_threshold: float = 0.5,
    size_bucket: str = "all",
) -> Optional[float]:
    """
    Class-averaged AP at one IoU threshold; None when no GT falls in the
    bucket.
    """
    if size_bucket not in SIZE_BUCKETS:
        raise ValueError(f"Unknown size bucket '{size_bucket}', expected one of {list(SIZE_BUCKETS)}")
    per_class = per_class_ap(preds, gts, iou_threshold, size_bucket)
    values = [v for v in per_class.values() if v is not None]
    if not values:
        return None
    return float(np.mean(values))


def per_class_ap(
    preds: pd.DataFrame,
    gts: pd.DataFrame,
    iou_threshold: float = 0.5,
    size_bucket: str = "all",
) -> Dict[int, Optional[float]]:
    pred_classes = _by_class(preds)
    gt_classes = _by_class(gts)
    result: Dict[int, Optional[float]] = {}
    for cid, g in gt_classes.items():
        p = pred_classes.get(cid, preds.iloc[0:0])
        result[cid] = interpolated_ap(match_class(p, g, iou_threshold, size_bucket))
    return result


def f1_at_best_threshold(
    preds: pd.DataFrame,
    gts: pd.DataFrame,
    iou_threshold: float = 0.5,
) -> Optional[float]:
    """
    Best 2PR/(P+R) over score thresholds taken from the observed scores.
    None when there are neither GTs nor predictions.
    """
    n_gt = len(gts)
    if n_gt == 0 and len(preds) == 0:
        return None
    if n_gt == 0 or len(preds) == 0:
        return 0.0

    scores, tps = [], []
    gt_classes = _by_class(gts)
    for cid, p in _by_class(preds).items():
        m = match_class(p, gt_classes.get(cid, gts.iloc[0:0]), iou_threshold)
        scores.append(m.scores)
        tps.append(m.tp)
    scores = np.concatenate(scores)
    tp = np.concatenate(tps)
    order = np.argsort(-scores, kind="mergesort")
    scores, tp = scores[order], tp[order]

    tp_cum = np.cumsum(tp)
    n_pred = np.arange(1, len(tp) + 1)
    # a threshold t keeps every prediction with score >= t: evaluate at the
    # last index of each tied score group
    last = np.r_[scores[1:] != scores[:-1], True]
    precision = tp_cum[last] / n_pred[last]
    recall = tp_cum[last] / n_gt
    denom = precision + recall
    f1 = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1.0), 0.0)
    return float(f1.max())


def records_to_frame(records: List[Dict], with_score: bool) -> pd.DataFrame:
    """[{image_id, category_id, bbox, score?}] → flat frame."""
    columns = PRED_COLUMNS if with_score else GT_COLUMNS
    rows = []
    for r in records:
        x, y, w, h = (float(v) for v in r["bbox"])
        row = [int(r["image_id"]), int(r["category_id"]), x, y, w, h]
        if with_score:
            row.append(float(r["score"]))
        rows.append(row)
    frame = pd.DataFrame(rows, columns=columns)
    return frame.astype({"image_id": "int64", "category_id": "int64"})
