import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from freqpriv.core.settings import settings
from freqpriv.data.handler import DataHandler
from freqpriv.detection.boxes import BBox
from freqpriv.detection.decode import DEFAULT_NMS_IOU, decode
from freqpriv.detection.model import DetectorModel
from freqpriv.evaluation.metrics import (
    GT_COLUMNS,
    IOU_THRESHOLDS,
    PRED_COLUMNS,
    average_precision,
    f1_at_best_threshold,
    per_class_ap,
    records_to_frame,
)
from freqpriv.stats.annotations import AnnotationSet

logger = logging.getLogger(__name__)

METRIC_KEYS = ["AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L", "F1"]


@dataclass
class EvalResult:
    """
    COCO-style summary. ``None`` marks an absent metric (no GT in scope),
    never a zero.
    """

    ap: Optional[float]
    ap50: Optional[float]
    ap75: Optional[float]
    ap_s: Optional[float]
    ap_m: Optional[float]
    ap_l: Optional[float]
    f1: Optional[float]
    per_class: pd.DataFrame = field(default_factory=pd.DataFrame)

    def to_dict(self) -> Dict[str, Optional[float]]:
        return dict(zip(METRIC_KEYS, [self.ap, self.ap50, self.ap75, self.ap_s,
                                      self.ap_m, self.ap_l, self.f1]))

    def write(self, out_dir: Union[str, Path]) -> List[Path]:
        out_dir = Path(out_dir)
        metrics = self.to_dict()
        row = pd.DataFrame([{k: ("absent" if v is None else v) for k, v in metrics.items()}])
        return [
            DataHandler(out_dir / "metrics.json").save(metrics),
            DataHandler(out_dir / "metrics.csv").save(row),
            DataHandler(out_dir / "per_class.csv").save(self.per_class),
        ]


def _mean_over_thresholds(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    if not present:
        return None
    return float(np.mean(present))


def evaluate(preds: pd.DataFrame, gts: pd.DataFrame) -> EvalResult:
    """AP over IoU 0.50:0.05:0.95, AP50, AP75, AP_S/M/L, swept F1, per-class AP."""
    ap_by_t = [average_precision(preds, gts, float(t)) for t in IOU_THRESHOLDS]

    per_class_by_t = [per_class_ap(preds, gts, float(t)) for t in IOU_THRESHOLDS]
    class_ids = sorted(per_class_by_t[0]) if per_class_by_t else []
    per_class = pd.DataFrame({
        "category_id": class_ids,
        "n_gt": [int((gts["category_id"] == c).sum()) for c in class_ids],
        "AP": [_mean_over_thresholds([pc[c] for pc in per_class_by_t]) for c in class_ids],
        "AP50": [per_class_by_t[0][c] for c in class_ids],
    }, columns=["category_id", "n_gt", "AP", "AP50"])

    result = EvalResult(
        ap=_mean_over_thresholds(ap_by_t),
        ap50=ap_by_t[0],
        ap75=ap_by_t[5],
        ap_s=_mean_over_thresholds([average_precision(preds, gts, float(t), "small") for t in IOU_THRESHOLDS]),
        ap_m=_mean_over_thresholds([average_precision(preds, gts, float(t), "medium") for t in IOU_THRESHOLDS]),
        ap_l=_mean_over_thresholds([average_precision(preds, gts, float(t), "large") for t in IOU_THRESHOLDS]),
        f1=f1_at_best_threshold(preds, gts),
        per_class=per_class,
    )
    logger.info("Eval: %s", {k: (None if v is None else round(v, 4)) for k, v in result.to_dict().items()})
    return result


# ------------------------------------------------------------------
# Prediction / GT frames
# ------------------------------------------------------------------


def gts_from_annotations(ann_set: AnnotationSet) -> pd.DataFrame:
    frame = ann_set.annotations[["image_id", "category_id", "x", "y", "w", "h"]].copy()
    return frame.astype({"image_id": "int64", "category_id": "int64"})[GT_COLUMNS]


def load_predictions(path: Union[str, Path]) -> pd.DataFrame:
    """JSON lines {image_id, category_id, bbox, score} → frame."""
    return records_to_frame(DataHandler(path, file_type="jsonl").load(), with_score=True)


def save_predictions(preds: pd.DataFrame, path: Union[str, Path]) -> Path:
    records = [
        {"image_id": int(r.image_id), "category_id": int(r.category_id),
         "bbox": [float(r.x), float(r.y), float(r.w), float(r.h)], "score": float(r.score)}
        for r in preds.itertuples(index=False)
    ]
    return DataHandler(path, file_type="jsonl").save(records)


def _predict_one(
    model: DetectorModel,
    image_id: int,
    image: np.ndarray,
    score_threshold: float,
    nms_iou: float,
) -> List[Tuple]:
    hp = model.hparams
    head = model.forward(image).head
    boxes: List[BBox] = decode(
        head, score_threshold, (hp.image_height, hp.image_width), hp.num_classes,
        nms_iou=nms_iou, size_prior=hp.size_prior,
    )
    return [(image_id, b.class_id, b.x, b.y, b.w, b.h, b.score) for b in boxes]


def predict(
    model: DetectorModel,
    images: Sequence[Tuple[int, np.ndarray]],
    score_threshold: float = 0.001,
    nms_iou: float = DEFAULT_NMS_IOU,
    n_jobs: Optional[int] = None,
) -> pd.DataFrame:
    """Decoded detections for (image_id, C×H×W image) pairs; forward passes fan out."""
    n_jobs = n_jobs or settings.threads
    rows = Parallel(n_jobs=n_jobs)(
        delayed(_predict_one)(model, image_id, image, score_threshold, nms_iou)
        for image_id, image in images
    )
    frame = pd.DataFrame([r for chunk in rows for r in chunk], columns=PRED_COLUMNS)
    return frame.astype({"image_id": "int64", "category_id": "int64"})
