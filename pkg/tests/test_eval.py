import json

import numpy as np
import pandas as pd
import pytest

from freqpriv.detection.boxes import BBox, iou
from freqpriv.evaluation.evaluate import (
    METRIC_KEYS,
    evaluate,
    load_predictions,
    predict,
    save_predictions,
)
from freqpriv.evaluation.metrics import (
    IOU_THRESHOLDS,
    PRED_COLUMNS,
    RECALL_GRID,
    average_precision,
    f1_at_best_threshold,
    in_bucket,
    records_to_frame,
)


# ---------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------

def gt_frame(*rows):
    """rows: (image_id, category_id, x, y, w, h)"""
    return records_to_frame(
        [{"image_id": r[0], "category_id": r[1], "bbox": list(r[2:])} for r in rows],
        with_score=False,
    )


def pred_frame(*rows):
    """rows: (image_id, category_id, x, y, w, h, score)"""
    return records_to_frame(
        [{"image_id": r[0], "category_id": r[1], "bbox": list(r[2:6]), "score": r[6]} for r in rows],
        with_score=True,
    )


def as_predictions(gts, score=1.0):
    preds = gts.copy()
    preds["score"] = score
    return preds[PRED_COLUMNS]


@pytest.fixture
def gts():
    return gt_frame(
        (0, 0, 10, 10, 20, 20),
        (0, 1, 40, 5, 12, 30),
        (1, 0, 3, 3, 8, 8),
    )


# ---------------------------------------------------------------------
# Average precision
# ---------------------------------------------------------------------

@pytest.mark.parametrize("threshold", IOU_THRESHOLDS.tolist())
def test_exact_predictions_score_one_at_every_threshold(gts, threshold):
    assert average_precision(as_predictions(gts), gts, threshold) == 1.0


def test_exact_predictions_summary(gts):
    result = evaluate(as_predictions(gts), gts)

    assert result.ap == 1.0
    assert result.ap50 == 1.0
    assert result.ap75 == 1.0
    assert result.ap_s == 1.0
    assert result.ap_m is None
    assert result.ap_l is None
    assert result.f1 == 1.0
    assert result.per_class["AP"].tolist() == [1.0, 1.0]


def test_no_predictions_scores_zero(gts):
    result = evaluate(records_to_frame([], with_score=True), gts)

    assert result.ap == 0.0
    assert result.f1 == 0.0


def test_absent_ground_truth_is_none_not_zero(gts):
    empty = records_to_frame([], with_score=False)

    assert average_precision(as_predictions(gts), empty) is None
    assert evaluate(as_predictions(gts), empty).ap is None
    assert average_precision(as_predictions(gts), gts, size_bucket="large") is None


def test_half_recall_ap():
    """Recall stops at 0.5, so 51 of the 101 grid points see precision 1."""
    gts = gt_frame((0, 0, 0, 0, 10, 10), (0, 0, 50, 50, 10, 10))
    preds = pred_frame((0, 0, 0, 0, 10, 10, 0.9))

    assert average_precision(preds, gts) == pytest.approx(51 / 101)


def test_false_positive_ranked_first():
    gts = gt_frame((0, 0, 0, 0, 10, 10))
    preds = pred_frame((0, 0, 60, 60, 10, 10, 0.9), (0, 0, 0, 0, 10, 10, 0.8))

    assert average_precision(preds, gts) == pytest.approx(0.5)
    assert f1_at_best_threshold(preds, gts) == pytest.approx(2 / 3)


def test_each_ground_truth_matches_once():
    gts = gt_frame((0, 0, 0, 0, 10, 10))
    preds = pred_frame((0, 0, 0, 0, 10, 10, 0.9), (0, 0, 0, 0, 10, 10, 0.8))

    assert f1_at_best_threshold(preds, gts) == pytest.approx(1.0)
    assert average_precision(preds, gts) == pytest.approx(1.0)


def test_unknown_bucket_rejected(gts):
    with pytest.raises(ValueError):
        average_precision(as_predictions(gts), gts, size_bucket="huge")


# ---------------------------------------------------------------------
# Size buckets
# ---------------------------------------------------------------------

def test_bucket_edges():
    area = np.array([1023.0, 1024.0, 9216.0, 9217.0])

    assert in_bucket(area, "small").tolist() == [True, False, False, False]
    assert in_bucket(area, "medium").tolist() == [False, True, True, False]
    assert in_bucket(area, "large").tolist() == [False, False, False, True]


def test_out_of_bucket_matches_are_ignored():
    """The large GT and its detection drop out of AP_S entirely."""
    gts = gt_frame((0, 0, 0, 0, 10, 10), (0, 0, 100, 100, 100, 100))
    preds = as_predictions(gts)

    assert average_precision(preds, gts, size_bucket="small") == 1.0
    assert average_precision(preds, gts, size_bucket="large") == 1.0
    assert average_precision(preds, gts, size_bucket="medium") is None


# ---------------------------------------------------------------------
# F1
# ---------------------------------------------------------------------

def test_f1_perfect_and_wrong_class(gts):
    wrong = as_predictions(gts)
    wrong["category_id"] = 2

    assert f1_at_best_threshold(as_predictions(gts), gts) == 1.0
    assert f1_at_best_threshold(wrong, gts) == 0.0


def test_f1_edge_cases(gts):
    no_preds = records_to_frame([], with_score=True)
    no_gts = records_to_frame([], with_score=False)

    assert f1_at_best_threshold(no_preds, no_gts) is None
    assert f1_at_best_threshold(no_preds, gts) == 0.0
    assert f1_at_best_threshold(as_predictions(gts), no_gts) == 0.0


# ---------------------------------------------------------------------
# Files and inference
# ---------------------------------------------------------------------

def test_predictions_survive_jsonl(tmp_path, gts):
    preds = as_predictions(gts, score=0.75)

    path = save_predictions(preds, tmp_path / "preds.jsonl")

    pd.testing.assert_frame_equal(load_predictions(path), preds.reset_index(drop=True))


def test_result_write_marks_absent_metrics(tmp_path, gts):
    result = evaluate(as_predictions(gts), gts)

    result.write(tmp_path)

    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert set(metrics) == set(METRIC_KEYS)
    assert metrics["AP_L"] is None
    row = pd.read_csv(tmp_path / "metrics.csv")
    assert row.loc[0, "AP_L"] == "absent"
    assert (tmp_path / "per_class.csv").exists()


def test_predict_produces_scored_frame(small_model, rng):
    images = [(0, rng.random((1, 32, 32))), (5, rng.random((1, 32, 32)))]

    preds = predict(small_model, images, score_threshold=0.001, n_jobs=1)

    assert list(preds.columns) == PRED_COLUMNS
    assert set(preds["image_id"]) <= {0, 5}
    assert (preds["score"] > 0.001).all()
    assert ((preds["x"] >= 0) & (preds["x"] + preds["w"] <= 32 + 1e-9)).all()


# ---------------------------------------------------------------------
# Random instances against a plain-Python oracle
# ---------------------------------------------------------------------

def random_instance(rng, n_images=3, n_classes=3):
    """Jittered copies of random GTs plus clutter, with distinct scores."""
    gt_rows = []
    for image_id in range(n_images):
        for _ in range(int(rng.integers(0, 5))):
            x, y = rng.uniform(0, 48, size=2)
            w, h = rng.uniform(4, 16, size=2)
            gt_rows.append((image_id, int(rng.integers(n_classes)), x, y, w, h))
    if not gt_rows:
        gt_rows.append((0, 0, 10.0, 10.0, 8.0, 8.0))

    pred_rows = []
    for image_id, cid, x, y, w, h in gt_rows:
        if rng.random() < 0.7:
            dx, dy = rng.normal(0.0, 2.0, size=2)
            sw, sh = rng.uniform(0.8, 1.2, size=2)
            cid = cid if rng.random() < 0.9 else int(rng.integers(n_classes))
            pred_rows.append((image_id, cid, x + dx, y + dy, w * sw, h * sh))
    for _ in range(int(rng.integers(0, 4))):
        x, y = rng.uniform(0, 48, size=2)
        w, h = rng.uniform(4, 16, size=2)
        pred_rows.append((int(rng.integers(n_images)), int(rng.integers(n_classes)), x, y, w, h))
    scores = rng.uniform(0.01, 0.9, size=len(pred_rows))

    preds = pred_frame(*[row + (float(s),) for row, s in zip(pred_rows, scores)])
    return preds, gt_frame(*gt_rows)


def oracle_matching(preds, gts, threshold=0.5):
    """
    Greedy matching one (image, class) at a time, detections by descending
    score. Returns per-class [(score, is_tp)], per-class GT counts and the
    gts row labels that were matched.
    """
    outcomes, n_gt, matched = {}, {}, set()
    for cid in set(gts["category_id"]) | set(preds["category_id"]):
        g = gts[gts["category_id"] == cid]
        p = preds[preds["category_id"] == cid]
        n_gt[cid] = len(g)
        outcomes[cid] = []
        for image_id in set(g["image_id"]) | set(p["image_id"]):
            g_img = g[g["image_id"] == image_id]
            gt_boxes = {label: BBox(r.x, r.y, r.w, r.h) for label, r in g_img.iterrows()}
            dets = p[p["image_id"] == image_id].sort_values("score", ascending=False)
            taken = set()
            for r in dets.itertuples():
                det = BBox(r.x, r.y, r.w, r.h)
                candidates = [
                    (iou(det, box), label) for label, box in gt_boxes.items()
                    if label not in taken and iou(det, box) >= threshold
                ]
                if candidates:
                    taken.add(max(candidates)[1])
                outcomes[cid].append((r.score, bool(candidates)))
            matched |= taken
    return outcomes, n_gt, matched


def oracle_ap(preds, gts, threshold=0.5):
    outcomes, n_gt, _ = oracle_matching(preds, gts, threshold)
    aps = []
    for cid, count in n_gt.items():
        if count == 0:
            continue
        ranked = sorted(outcomes[cid], key=lambda o: -o[0])
        points, tp = [], 0
        for k, (_, hit) in enumerate(ranked, start=1):
            tp += hit
            points.append((tp / count, tp / k))
        sampled = [max([p for rc, p in points if rc >= r], default=0.0) for r in RECALL_GRID]
        aps.append(sum(sampled) / len(sampled))
    return sum(aps) / len(aps)


def oracle_f1(preds, gts, threshold=0.5):
    best = 0.0
    for t in set(preds["score"]):
        kept = preds[preds["score"] >= t]
        outcomes, _, _ = oracle_matching(kept, gts, threshold)
        tp = sum(hit for rows in outcomes.values() for _, hit in rows)
        precision, recall = tp / len(kept), tp / len(gts)
        if precision + recall > 0:
            best = max(best, 2 * precision * recall / (precision + recall))
    return best


@pytest.mark.parametrize("seed", range(50))
def test_ap_and_f1_match_oracle(seed):
    preds, gts = random_instance(np.random.default_rng(seed))

    assert average_precision(preds, gts, 0.5) == pytest.approx(oracle_ap(preds, gts), abs=1e-12)
    assert f1_at_best_threshold(preds, gts, 0.5) == pytest.approx(oracle_f1(preds, gts), abs=1e-12)


@pytest.mark.parametrize("seed", range(50))
def test_monotone_score_transform_keeps_metrics(seed):
    preds, gts = random_instance(np.random.default_rng(seed))
    rescaled = preds.assign(score=np.sqrt(preds["score"]))

    assert average_precision(rescaled, gts) == pytest.approx(average_precision(preds, gts), abs=1e-12)
    assert f1_at_best_threshold(rescaled, gts) == pytest.approx(f1_at_best_threshold(preds, gts), abs=1e-12)


@pytest.mark.parametrize("seed", range(50))
def test_top_scored_hit_on_unmatched_gt_never_lowers_ap(seed):
    """
    Only unmatched GTs: a new top-score box on an already matched GT takes it
    over and demotes the earlier hit to a false positive.
    """
    preds, gts = random_instance(np.random.default_rng(seed))

    for t in IOU_THRESHOLDS:
        _, _, matched = oracle_matching(preds, gts, t)
        unmatched = gts.drop(index=sorted(matched))
        if unmatched.empty:
            continue
        extra = as_predictions(unmatched.iloc[:1], score=1.0)
        augmented = pd.concat([preds, extra], ignore_index=True)

        assert average_precision(augmented, gts, t) >= average_precision(preds, gts, t) - 1e-12
