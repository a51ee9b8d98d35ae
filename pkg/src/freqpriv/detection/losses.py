"""
Detection loss and the total objective.

L_det   = BCE(objectness, all cells) + CE(class, positives) + smoothL1(box, positives)
L_total = L_det + beta · L_freq

L_freq compares ROI crops of the neck feature: P_i under the predicted box
matched to GT_i (highest IoU first, IoU >= match_iou) and T_i under GT_i
itself. T_i, the matching and the assignment are stop-gradient.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, log_softmax, softmax

from freqpriv.core.errors import ShapeError
from freqpriv.detection.boxes import BBox, boxes_to_array, greedy_match, iou_matrix
from freqpriv.detection.decode import decode_cells
from freqpriv.detection.model import STRIDE, DetectorModel
from freqpriv.detection.roi import roi_crop, roi_crop_graph
from freqpriv.detection.targets import AssignmentTable, assign_targets
from freqpriv.frequency.loss import freq_loss_graph
from freqpriv.tensor.ops import ADD, SCALE, Op, register_op
from freqpriv.tensor.tape import Tape, Var

logger = logging.getLogger(__name__)

DEFAULT_MATCH_IOU = 0.25


# ------------------------------------------------------------------
# Detection loss op
# ------------------------------------------------------------------


def _smooth_l1(d: np.ndarray) -> np.ndarray:
    a = np.abs(d)
    return np.where(a < 1.0, 0.5 * d * d, a - 0.5)


class DetectionLoss(Op):
    """
    Scalar L_det of a head map under a fixed assignment table.

    Each term is mean-reduced (objectness over cells, class over positives,
    box over positives × 4 regressands) and the terms are summed.
    """

    name = "detection_loss"

    def forward(self, head, assignment: AssignmentTable, num_classes: int):
        head = np.asarray(head, dtype=np.float64)
        k = num_classes
        if head.shape[0] != 1 + k + 4 or head.shape[1:] != assignment.grid:
            raise ShapeError(
                f"Head {head.shape} inconsistent with {k} classes / grid {assignment.grid}"
            )
        obj = head[0]
        target_obj = assignment.positive.astype(np.float64)
        n_cells = obj.size
        objectness = float(np.sum(np.logaddexp(0.0, obj) - target_obj * obj) / n_cells)

        pos = assignment.positive
        n_pos = int(pos.sum())
        classification = 0.0
        box = 0.0
        if n_pos:
            logits = head[1:1 + k][:, pos]  # (k, n_pos)
            labels = assignment.class_ids[pos]
            logp = log_softmax(logits, axis=0)
            classification = float(-np.sum(logp[labels, np.arange(n_pos)]) / n_pos)

            reg = head[1 + k:][:, pos]
            diff = reg - assignment.box_targets[:, pos]
            box = float(np.sum(_smooth_l1(diff)) / (n_pos * 4))

        terms = {"objectness": objectness, "classification": classification, "box": box}
        total = objectness + classification + box
        return np.asarray(total), (head, assignment, k, terms)

    def vjp(self, ctx, grad):
        head, assignment, k, _ = ctx
        g = float(grad)
        out = np.zeros_like(head)

        obj = head[0]
        out[0] = (expit(obj) - assignment.positive) / obj.size

        pos = assignment.positive
        n_pos = int(pos.sum())
        if n_pos:
            logits = head[1:1 + k][:, pos]
            labels = assignment.class_ids[pos]
            probs = softmax(logits, axis=0)
            probs[labels, np.arange(n_pos)] -= 1.0
            cls_grad = np.zeros((k,) + pos.shape)
            cls_grad[:, pos] = probs / n_pos
            out[1:1 + k] = cls_grad

            diff = head[1 + k:][:, pos] - assignment.box_targets[:, pos]
            box_grad = np.zeros((4,) + pos.shape)
            box_grad[:, pos] = np.clip(diff, -1.0, 1.0) / (n_pos * 4)
            out[1 + k:] = box_grad

        return (out * g,)


DETECTION_LOSS = register_op(DetectionLoss())


@dataclass
class DetectionLossResult:
    total: float
    objectness: float
    classification: float
    box: float


def detection_loss(
    head: np.ndarray,
    assignment: AssignmentTable,
    num_classes: int,
) -> DetectionLossResult:
    value, ctx = DETECTION_LOSS.forward(head, assignment=assignment, num_classes=num_classes)
    terms = ctx[3]
    return DetectionLossResult(float(value), **terms)


# ------------------------------------------------------------------
# Frequency pairs
# ------------------------------------------------------------------


@dataclass(frozen=True)
class FreqPair:
    gt_index: int
    predicted: BBox
    target: BBox


def match_predictions(
    head: np.ndarray,
    gt: Sequence[BBox],
    num_classes: int,
    image_dims: Tuple[int, int],
    match_iou: float = DEFAULT_MATCH_IOU,
    size_prior: float = 8.0,
) -> List[FreqPair]:
    """Pair each GT with a decoded cell box, highest IoU first."""
    if not gt:
        return []
    cells = decode_cells(head, num_classes, image_dims, STRIDE, size_prior)
    valid = np.flatnonzero(cells.valid)
    if valid.size == 0:
        return []
    ious = iou_matrix(boxes_to_array(gt), cells.boxes[valid])
    pairs = []
    for g_idx, c_idx in greedy_match(ious, match_iou):
        b = cells.boxes[valid[c_idx]]
        predicted = BBox(float(b[0]), float(b[1]), float(b[2]), float(b[3]),
                         class_id=int(cells.class_ids[valid[c_idx]]))
        pairs.append(FreqPair(g_idx, predicted, gt[g_idx]))
    pairs.sort(key=lambda p: p.gt_index)
    return pairs


# ------------------------------------------------------------------
# Total loss
# ------------------------------------------------------------------


def compose_total(l_det: float, l_freq: float, beta: float) -> float:
    """L_total = L_det + beta·L_freq, evaluated in the same order as the tape."""
    return float(np.float64(l_det) + np.float64(l_freq) * np.float64(beta))


@dataclass
class LossResult:
    total: float
    breakdown: Dict[str, float]
    grads: Dict[str, np.ndarray] = field(default_factory=dict)
    pairs: List[FreqPair] = field(default_factory=list)


def loss_and_grads(
    model: DetectorModel,
    image: np.ndarray,
    gt: Sequence[BBox],
    beta: float,
    lam: float,
    roi_size: int,
    use_freq: bool = True,
    match_iou: float = DEFAULT_MATCH_IOU,
    pairs: Optional[List[FreqPair]] = None,
    with_grads: bool = True,
    target_crops: Optional[Sequence[np.ndarray]] = None,
) -> LossResult:
    """
    Forward, loss and (optionally) parameter gradients for one image.

    ``pairs`` overrides the predicted/GT matching, which otherwise is
    recomputed from the current head map. ``target_crops`` (aligned with
    ``pairs``) pins the T_i values instead of cropping the current neck.
    """
    hp = model.hparams
    tape = Tape()
    head, neck = model.graph(tape, image, differentiable=with_grads)
    assignment = assign_targets(gt, hp.grid, STRIDE, hp.size_prior)
    det = tape.apply(DETECTION_LOSS, head, assignment=assignment, num_classes=hp.num_classes)
    det_terms = DETECTION_LOSS.forward(head.value, assignment=assignment,
                                       num_classes=hp.num_classes)[1][3]

    freq_value = 0.0
    used_pairs: List[FreqPair] = []
    total: Var = det
    if use_freq and beta > 0:
        if pairs is None:
            pairs = match_predictions(
                head.value, gt, hp.num_classes,
                (hp.image_height, hp.image_width), match_iou, hp.size_prior,
            )
        p_vars: List[Var] = []
        t_values: List[np.ndarray] = []
        if target_crops is not None and len(target_crops) != len(pairs):
            raise ShapeError(f"{len(target_crops)} target crops for {len(pairs)} pairs")
        for i, pair in enumerate(pairs):
            p_crop = roi_crop_graph(tape, neck, pair.predicted, roi_size)
            if target_crops is not None:
                t_value = np.asarray(target_crops[i], dtype=np.float64)
            else:
                t_crop = roi_crop(neck.value, pair.target, roi_size)
                t_value = None if t_crop is None else t_crop.values
            if p_crop is None or t_value is None:
                continue
            p_vars.append(p_crop)
            t_values.append(t_value)
            used_pairs.append(pair)
        freq = freq_loss_graph(tape, p_vars, t_values, lam, hp.dft_backend)
        if freq is not None:
            freq_value = float(freq.value)
            total = tape.apply(ADD, det, tape.apply(SCALE, freq, factor=float(beta)))

    breakdown = {
        "total": float(total.value),
        "det": float(det.value),
        "objectness": det_terms["objectness"],
        "classification": det_terms["classification"],
        "box": det_terms["box"],
        "freq": freq_value,
        "beta_freq": freq_value * float(beta) if used_pairs else 0.0,
        "n_freq_pairs": float(len(used_pairs)),
    }
    grads = tape.backward(total) if with_grads else {}
    return LossResult(float(total.value), breakdown, grads, used_pairs)


def total_loss(model, image, gt, config) -> Tuple[float, Dict[str, float]]:
    """L_total and its term breakdown for one image under a TrainConfig."""
    result = loss_and_grads(
        model, image, gt,
        beta=config.beta, lam=config.lam, roi_size=config.roi_size,
        use_freq=config.use_freq_loss, match_iou=config.match_iou,
        with_grads=False,
    )
    return result.total, result.breakdown
