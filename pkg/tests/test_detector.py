import logging

import numpy as np
import pytest
from scipy.special import expit, log_softmax

from freqpriv.core.errors import ShapeError, ValidationError
from freqpriv.detection.boxes import BBox, greedy_match, iou, iou_matrix, nms
from freqpriv.detection.decode import decode, decode_cells, regressands_to_boxes
from freqpriv.detection.losses import (
    FreqPair,
    compose_total,
    detection_loss,
    loss_and_grads,
    match_predictions,
)
from freqpriv.detection.model import (
    OBJECTNESS_PRIOR_LOGIT,
    STRIDE,
    DetectorHParams,
    DetectorModel,
    without_fdaf,
)
from freqpriv.detection.roi import roi_crop
from freqpriv.detection.targets import assign_targets, encode_box
from freqpriv.frequency.gating import PASS_THROUGH_LOGIT

K = 3
GRID = (8, 8)
IMAGE_DIMS = (32, 32)


# ---------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------

def empty_head(fill_objectness: float = -40.0) -> np.ndarray:
    head = np.zeros((1 + K + 4,) + GRID)
    head[0] = fill_objectness
    return head


def perfect_head(gt):
    """Head map that saturates every term of the loss for ``gt``."""
    table = assign_targets(gt, GRID, STRIDE)
    head = empty_head()
    head[0][table.positive] = 40.0
    for r, c in zip(*np.nonzero(table.positive)):
        head[1 + table.class_ids[r, c], r, c] = 40.0
    head[1 + K:] = table.box_targets
    return head, table


def loss_oracle(head, table):
    """Loop-based evaluation of the three detection terms."""
    obj = head[0]
    objectness = 0.0
    for r in range(obj.shape[0]):
        for c in range(obj.shape[1]):
            p = expit(obj[r, c])
            y = float(table.positive[r, c])
            objectness -= y * np.log(p) + (1 - y) * np.log(1 - p)
    objectness /= obj.size

    cls, box, n = 0.0, 0.0, 0
    for r, c in zip(*np.nonzero(table.positive)):
        n += 1
        cls -= log_softmax(head[1:1 + K, r, c])[table.class_ids[r, c]]
        for j in range(4):
            d = head[1 + K + j, r, c] - table.box_targets[j, r, c]
            box += 0.5 * d * d if abs(d) < 1 else abs(d) - 0.5
    if n:
        cls /= n
        box /= 4 * n
    return objectness + cls + box


# ---------------------------------------------------------------------
# Boxes
# ---------------------------------------------------------------------

def test_iou_cases():
    a = BBox(0.0, 0.0, 1.0, 1.0)

    assert iou(a, a) == 1.0
    assert iou(a, BBox(5.0, 5.0, 1.0, 1.0)) == 0.0
    assert iou(a, BBox(0.5, 0.0, 1.0, 1.0)) == pytest.approx(1.0 / 3.0)


def test_iou_matrix_agrees_with_pairwise(rng):
    boxes = [BBox(*rng.uniform(0, 10, 2), *rng.uniform(1, 5, 2)) for _ in range(4)]
    arr = np.array([b.to_list() for b in boxes])

    mat = iou_matrix(arr, arr)

    for i, a in enumerate(boxes):
        for j, b in enumerate(boxes):
            assert mat[i, j] == pytest.approx(iou(a, b), abs=1e-12)


def test_box_validation():
    with pytest.raises(ValidationError):
        BBox(0.0, 0.0, 0.0, 1.0)
    with pytest.raises(ValidationError):
        BBox(0.0, 0.0, 1.0, 1.0, score=1.5)


def test_nms_suppresses_same_class_only():
    boxes = [
        BBox(0.0, 0.0, 10.0, 10.0, class_id=0, score=0.9),
        BBox(1.0, 1.0, 10.0, 10.0, class_id=0, score=0.8),
        BBox(1.0, 1.0, 10.0, 10.0, class_id=1, score=0.7),
    ]

    kept = nms(boxes, iou_threshold=0.6)

    assert [(b.class_id, b.score) for b in kept] == [(0, 0.9), (1, 0.7)]


def test_greedy_match_highest_iou_first():
    ious = np.array([
        [0.9, 0.8, 0.0],
        [0.85, 0.3, 0.0],
        [0.0, 0.0, 0.2],
    ])

    assert greedy_match(ious, threshold=0.25) == [(0, 0), (1, 1)]


# ---------------------------------------------------------------------
# Model and decoding
# ---------------------------------------------------------------------

def test_zero_weights_give_neutral_head(small_hparams):
    """All-zero parameters: objectness logits 0, objectness 0.5 everywhere."""
    model = DetectorModel.create(small_hparams, seed=0)
    model.params = {k: np.zeros_like(v) for k, v in model.params.items()}

    head = model.forward(np.random.default_rng(0).random((1, 32, 32))).head
    cells = decode_cells(head, K, IMAGE_DIMS)

    assert head.shape == (1 + K + 4, 8, 8)
    assert np.array_equal(head[0], np.zeros((8, 8)))
    assert np.allclose(cells.objectness, 0.5)
    assert np.allclose(cells.scores, 0.5 / K)


def test_fresh_model_uses_objectness_prior(small_model):
    assert small_model.params["head.bias"][0] == OBJECTNESS_PRIOR_LOGIT
    assert np.array_equal(small_model.params["neck.fusion_weight"], np.zeros((4, 8)))


def test_forward_rejects_wrong_resolution(small_model):
    with pytest.raises(ShapeError):
        small_model.forward(np.zeros((1, 16, 16)))


def test_variant_structure():
    """I has no neck; II freezes the gate wide open; III/IV learn it."""
    kwargs = dict(width=4, num_classes=K, image_height=32, image_width=32)
    one = DetectorModel.create(DetectorHParams.for_variant("I", **kwargs))
    two = DetectorModel.create(DetectorHParams.for_variant("II", **kwargs))
    three = DetectorModel.create(DetectorHParams.for_variant("III", **kwargs))

    assert not any(k.startswith("neck.") for k in one.params)
    assert one.fdaf_block() is None
    assert two.frozen == ["neck.gate_logits"]
    assert np.all(two.params["neck.gate_logits"] == PASS_THROUGH_LOGIT)
    assert "neck.gate_logits" in three.trainable()


def test_unknown_variant_rejected():
    with pytest.raises(ValueError):
        DetectorHParams.for_variant("V")


def test_identity_fdaf_matches_plain_detector(small_model, rng):
    """With zero fusion the FDAF model and its neck-less copy detect the same boxes."""
    image = rng.random((1, 32, 32))
    plain = without_fdaf(small_model)

    with_block = decode(small_model.forward(image).head, 0.0, IMAGE_DIMS, K)
    without_block = decode(plain.forward(image).head, 0.0, IMAGE_DIMS, K)

    assert with_block == without_block
    assert np.array_equal(small_model.forward(image).neck, plain.forward(image).neck)


def test_decode_threshold_one_is_empty(rng):
    head = rng.standard_normal((1 + K + 4,) + GRID)

    assert decode(head, 1.0, IMAGE_DIMS, K) == []


def test_decode_single_saturated_cell():
    head = empty_head()
    head[0, 2, 3] = 40.0
    head[1] = 5.0

    boxes = decode(head, 0.5, IMAGE_DIMS, K)

    assert len(boxes) == 1
    assert boxes[0].to_list() == pytest.approx([10.0, 6.0, 8.0, 8.0])
    assert boxes[0].class_id == 0


def test_decode_rejects_bad_threshold():
    with pytest.raises(ValueError):
        decode(empty_head(), 1.5, IMAGE_DIMS, K)


def test_decoded_boxes_are_clamped(rng):
    head = rng.standard_normal((1 + K + 4,) + GRID) * 4.0

    cells = decode_cells(head, K, IMAGE_DIMS)
    x2 = cells.boxes[:, 0] + cells.boxes[:, 2]
    y2 = cells.boxes[:, 1] + cells.boxes[:, 3]

    assert np.all(cells.boxes[:, :2] >= 0)
    assert np.all(x2 <= 32 + 1e-9) and np.all(y2 <= 32 + 1e-9)


def cellwise_detections(head, threshold):
    """Every cell decoded on its own, clamped, then kept when score > threshold."""
    dets = []
    for i in range(GRID[0]):
        for j in range(GRID[1]):
            obj = 1.0 / (1.0 + np.exp(-head[0, i, j]))
            logits = head[1:1 + K, i, j]
            probs = np.exp(logits - logits.max())
            probs /= probs.sum()
            tx, ty, tw, th = head[1 + K:, i, j]
            cx = (j + 0.5 + np.tanh(tx)) * STRIDE
            cy = (i + 0.5 + np.tanh(ty)) * STRIDE
            w, h = 8.0 * np.exp(np.clip(tw, -8, 8)), 8.0 * np.exp(np.clip(th, -8, 8))
            x1, x2 = min(max(cx - w / 2, 0.0), 32.0), min(max(cx + w / 2, 0.0), 32.0)
            y1, y2 = min(max(cy - h / 2, 0.0), 32.0), min(max(cy + h / 2, 0.0), 32.0)
            score = obj * probs.max()
            if score > threshold and x2 > x1 and y2 > y1:
                dets.append((score, [x1, y1, x2 - x1, y2 - y1], int(np.argmax(probs))))
    return sorted(dets, key=lambda d: -d[0])


@pytest.mark.parametrize("seed", range(20))
def test_decode_matches_cellwise_oracle(seed):
    """NMS off (IoU bound 1): decode is the thresholded per-cell decoding."""
    rng = np.random.default_rng(seed)
    head = rng.standard_normal((1 + K + 4,) + GRID) * 2.0
    threshold = float(rng.uniform(0.05, 0.5))

    boxes = decode(head, threshold, IMAGE_DIMS, K, nms_iou=1.0)
    expected = cellwise_detections(head, threshold)

    assert len(boxes) == len(expected)
    for box, (score, coords, class_id) in zip(boxes, expected):
        assert box.score == pytest.approx(score, abs=1e-12)
        assert box.to_list() == pytest.approx(coords, abs=1e-9)
        assert box.class_id == class_id


# ---------------------------------------------------------------------
# Target assignment
# ---------------------------------------------------------------------

def test_center_cell_assignment():
    """A box centred at (22, 14) falls in row 3, column 5."""
    table = assign_targets([BBox(18.0, 10.0, 8.0, 8.0, class_id=2)], GRID, STRIDE)

    expected = np.zeros(GRID, dtype=bool)
    expected[3, 5] = True
    assert np.array_equal(table.positive, expected)
    assert table.class_ids[3, 5] == 2


def test_shared_cell_goes_to_larger_box():
    small = BBox(11.5, 13.0, 5.0, 2.0, class_id=1)
    large = BBox(9.0, 9.0, 10.0, 10.0, class_id=0)

    table = assign_targets([small, large], GRID, STRIDE)

    assert table.num_positives == 1
    assert table.gt_index[3, 3] == 1
    assert table.class_ids[3, 3] == 0


def test_assignment_independent_of_gt_order():
    gt = [BBox(11.5, 13.0, 5.0, 2.0, class_id=1), BBox(9.0, 9.0, 10.0, 10.0, class_id=0)]

    a = assign_targets(gt, GRID, STRIDE)
    b = assign_targets(gt[::-1], GRID, STRIDE)

    assert np.array_equal(a.class_ids, b.class_ids)
    assert np.array_equal(a.box_targets, b.box_targets)


def brute_force_assignment(gt):
    """Per cell, the largest box whose centre falls in it; ties by content, then index."""
    winners = {}
    for idx, box in enumerate(gt):
        cx, cy = box.center
        cell = (min(int(cy // STRIDE), GRID[0] - 1), min(int(cx // STRIDE), GRID[1] - 1))
        key = (-box.area, box.x, box.y, box.w, box.h, box.class_id, idx)
        if cell not in winners or key < winners[cell][0]:
            winners[cell] = (key, idx)
    return {cell: idx for cell, (_, idx) in winners.items()}


@pytest.mark.parametrize("seed", range(20))
def test_assignment_matches_brute_force(seed):
    """Ten random GTs on a 32×32 image, many sharing cells."""
    rng = np.random.default_rng(seed)
    gt = [
        BBox(float(rng.integers(0, 25)), float(rng.integers(0, 25)),
             float(rng.integers(1, 8)), float(rng.integers(1, 8)), class_id=int(rng.integers(K)))
        for _ in range(10)
    ]

    table = assign_targets(gt, GRID, STRIDE)
    expected = brute_force_assignment(gt)

    assert table.num_positives == len(expected)
    for (row, col), idx in expected.items():
        assert table.gt_index[row, col] == idx
        assert table.class_ids[row, col] == gt[idx].class_id
        assert np.allclose(table.box_targets[:, row, col], encode_box(gt[idx], row, col, STRIDE))
    assert np.all(table.box_targets[:, ~table.positive] == 0)


def test_center_outside_image_rejected():
    with pytest.raises(ValidationError):
        assign_targets([BBox(40.0, 2.0, 4.0, 4.0)], GRID, STRIDE)


def test_box_targets_invert_the_decoder():
    box = BBox(5.0, 7.0, 12.0, 6.0, class_id=1)
    table = assign_targets([box], GRID, STRIDE)

    decoded = regressands_to_boxes(table.box_targets)
    r, c = np.argwhere(table.positive)[0]

    assert decoded[r, c] == pytest.approx(box.to_list(), abs=1e-9)


# ---------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------

def test_perfect_logits_give_near_zero_loss():
    head, table = perfect_head([BBox(2.0, 3.0, 6.0, 5.0, class_id=1), BBox(18.0, 10.0, 8.0, 8.0)])

    assert detection_loss(head, table, K).total <= 1e-8


def test_empty_gt_with_negative_objectness():
    table = assign_targets([], GRID, STRIDE)

    result = detection_loss(empty_head(-40.0), table, K)

    assert result.total <= 1e-8
    assert result.classification == 0.0 and result.box == 0.0


def test_detection_loss_matches_oracle(rng):
    gt = [BBox(2.0, 3.0, 6.0, 5.0, class_id=1), BBox(18.0, 10.0, 8.0, 8.0, class_id=2)]
    table = assign_targets(gt, GRID, STRIDE)
    head = rng.standard_normal((1 + K + 4,) + GRID) * 2.0

    assert detection_loss(head, table, K).total == pytest.approx(loss_oracle(head, table), abs=1e-10)


def test_compose_total():
    assert compose_total(1.0, 4.0, 0.05) == pytest.approx(1.2)
    assert compose_total(0.7, 123.0, 0.0) == 0.7


def test_beta_zero_is_detection_loss(small_model, rng):
    image = rng.random((1, 32, 32))
    gt = [BBox(4.0, 4.0, 10.0, 8.0, class_id=1)]

    result = loss_and_grads(small_model, image, gt, beta=0.0, lam=2.0, roi_size=4)

    assert result.total == result.breakdown["det"]
    assert result.breakdown["beta_freq"] == 0.0


def test_predictions_on_gt_give_zero_freq_loss(small_model, rng):
    image = rng.random((1, 32, 32))
    gt = [BBox(4.0, 4.0, 10.0, 8.0, class_id=1), BBox(16.0, 18.0, 9.0, 9.0, class_id=0)]
    pairs = [FreqPair(i, box, box) for i, box in enumerate(gt)]

    result = loss_and_grads(small_model, image, gt, beta=0.5, lam=2.0, roi_size=4, pairs=pairs)

    assert result.breakdown["freq"] == 0.0
    assert result.total == result.breakdown["det"]
    assert result.breakdown["n_freq_pairs"] == 2.0


def test_freq_loss_reaches_gate_gradient(small_model, rng):
    """A mismatched pair sends gradient into the gate logits once fusion is non-zero."""
    model = small_model.copy()
    model.params["neck.fusion_weight"] = rng.standard_normal((4, 8)) * 0.1
    image = rng.random((1, 32, 32))
    gt = [BBox(4.0, 4.0, 10.0, 8.0, class_id=1)]
    pairs = [FreqPair(0, BBox(8.0, 6.0, 9.0, 10.0), gt[0])]

    result = loss_and_grads(model, image, gt, beta=1.0, lam=2.0, roi_size=4, pairs=pairs)

    assert result.breakdown["freq"] > 0
    assert np.any(result.grads["neck.gate_logits"] != 0)


def test_match_predictions_pairs_each_gt_once():
    head = empty_head()
    head[1 + K + 2:] = np.log(6.0 / 8.0)
    gt = [BBox(2.0, 3.0, 6.0, 6.0), BBox(18.0, 10.0, 6.0, 6.0)]

    pairs = match_predictions(head, gt, K, IMAGE_DIMS)

    assert [p.gt_index for p in pairs] == [0, 1]
    assert all(iou(p.predicted, p.target) >= 0.25 for p in pairs)


# ---------------------------------------------------------------------
# ROI crops
# ---------------------------------------------------------------------

def test_whole_image_roi_is_identity(rng):
    feature = rng.standard_normal((2, 8, 8))

    crop = roi_crop(feature, BBox(0.0, 0.0, 32.0, 32.0), size=8)

    assert np.allclose(crop.values, feature, atol=1e-12)


def test_constant_feature_gives_constant_crop():
    crop = roi_crop(np.full((3, 8, 8), 0.3), BBox(5.3, 2.1, 11.0, 7.5), size=5)

    assert crop.shape == (3, 5, 5)
    assert np.allclose(crop.values, 0.3)


def test_collapsed_roi_is_skipped(caplog):
    with caplog.at_level(logging.WARNING):
        crop = roi_crop(np.zeros((1, 8, 8)), BBox(40.0, 40.0, 4.0, 4.0), size=4)

    assert crop is None
    assert "collapses" in caplog.text
