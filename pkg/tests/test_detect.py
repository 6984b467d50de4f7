from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sidefuse.detect import (
    DetBox,
    GtBox,
    decode,
    detection_loss,
    evaluate,
    iou,
    nms,
    read_detections_csv,
    read_gt_csv,
    write_detections_csv,
    write_gt_csv,
)
from sidefuse.engine import Tensor

from conftest import assert_close


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def greedy_match_oracle(dets_by_frame, gts_by_frame, iou_thresh):
    """Grubby re-implementation: per-frame greedy matching in global order."""
    flat = [(d.conf, fi, j, d)
            for fi, ds in enumerate(dets_by_frame) for j, d in enumerate(ds)]
    flat.sort(key=lambda r: (-r[0], r[1], r[2]))
    used = [set() for _ in gts_by_frame]
    flags = []
    for conf, fi, _, det in flat:
        candidates = [(iou(det, g), k) for k, g in enumerate(gts_by_frame[fi])
                      if k not in used[fi]]
        candidates = [(v, k) for v, k in candidates if v >= iou_thresh]
        if candidates:
            v, k = max(candidates, key=lambda t: t[0])
            used[fi].add(k)
            flags.append((conf, True))
        else:
            flags.append((conf, False))
    return flags


def ap_oracle(dets_by_frame, gts_by_frame, iou_thresh=0.5):
    """Exhaustive AP: re-match from scratch at every prefix of the ranked
    detection list, build the PR point set, integrate the precision envelope."""
    n_gt = sum(len(g) for g in gts_by_frame)
    if n_gt == 0:
        return 0.0
    flat = [(d.conf, fi, j, d)
            for fi, ds in enumerate(dets_by_frame) for j, d in enumerate(ds)]
    flat.sort(key=lambda r: (-r[0], r[1], r[2]))
    points = []
    for k in range(1, len(flat) + 1):
        subset = [[] for _ in dets_by_frame]
        for conf, fi, _, det in flat[:k]:
            subset[fi].append(det)
        flags = greedy_match_oracle(subset, gts_by_frame, iou_thresh)
        tp = sum(1 for _, t in flags if t)
        points.append((tp / n_gt, tp / k))
    ap = 0.0
    prev_r = 0.0
    for i, (r, _) in enumerate(points):
        if r > prev_r:
            p_env = max(p for rr, p in points[i:] if rr >= r)
            ap += (r - prev_r) * p_env
            prev_r = r
    return ap


def nms_oracle(boxes, threshold):
    """O(n^2) reference NMS with the same ordering convention."""
    order = sorted(boxes, key=lambda b: (-b.conf, b.x1, b.y1, b.x2, b.y2))
    kept = []
    for b in order:
        suppressed = False
        for k in kept:
            if iou(b, k) > threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(b)
    return kept


def _random_instance(rng, max_boxes=20):
    """Random frames of boxes with continuous confidences (no ties)."""
    n_frames = int(rng.integers(1, 4))
    dets, gts = [], []
    for _ in range(n_frames):
        n_g = int(rng.integers(0, max_boxes // 3 + 1))
        frame_gts = []
        for _ in range(n_g):
            x1, y1 = rng.uniform(0, 50, 2)
            frame_gts.append(GtBox(x1, y1, x1 + rng.uniform(4, 12), y1 + rng.uniform(4, 12)))
        n_d = int(rng.integers(0, max_boxes // 2 + 1))
        frame_dets = []
        for _ in range(n_d):
            if frame_gts and rng.random() < 0.6:
                g = frame_gts[int(rng.integers(0, len(frame_gts)))]
                dx, dy = rng.uniform(-3, 3, 2)
                frame_dets.append(DetBox(
                    max(0.0, g.x1 + dx), max(0.0, g.y1 + dy),
                    g.x2 + dx, g.y2 + dy, float(rng.uniform(0.01, 0.999))))
            else:
                x1, y1 = rng.uniform(0, 50, 2)
                frame_dets.append(DetBox(x1, y1, x1 + rng.uniform(4, 12),
                                         y1 + rng.uniform(4, 12),
                                         float(rng.uniform(0.01, 0.999))))
        dets.append(frame_dets)
        gts.append(frame_gts)
    return dets, gts


# ---------------------------------------------------------------------------
# iou
# ---------------------------------------------------------------------------

def test_iou_identical_boxes():
    b = GtBox(4, 4, 10, 12)
    assert iou(b, b) == 1.0


def test_iou_disjoint_boxes():
    assert iou(GtBox(0, 0, 4, 4), GtBox(10, 10, 14, 14)) == 0.0


def test_iou_hand_case():
    assert iou(GtBox(0, 0, 2, 2), GtBox(1, 0, 3, 2)) == pytest.approx(2 / 6, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=100_000))
def test_iou_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a = GtBox(*(lambda x, y: (x, y, x + rng.uniform(1, 9), y + rng.uniform(1, 9)))(
        *rng.uniform(0, 40, 2)))
    b = GtBox(*(lambda x, y: (x, y, x + rng.uniform(1, 9), y + rng.uniform(1, 9)))(
        *rng.uniform(0, 40, 2)))
    v, w = iou(a, b), iou(b, a)
    assert v == w
    assert 0.0 <= v <= 1.0


# ---------------------------------------------------------------------------
# detection loss
# ---------------------------------------------------------------------------

def _head_with(obj_logit, boxes_logits=None):
    head = np.full((5, 4, 4), 0.0, dtype=np.float32)
    head[0] = obj_logit
    if boxes_logits:
        for (row, col), vals in boxes_logits.items():
            head[1:, row, col] = vals
    return head


def test_detection_loss_confident_negatives_near_zero():
    loss = detection_loss(Tensor(_head_with(-10.0)), [])
    assert loss.item() < 1e-3


def test_detection_loss_perfect_prediction():
    # box centered at (24, 8) in cell row 0 col 1, 8x6 px
    gt = GtBox(20.0, 5.0, 28.0, 11.0)
    t_cx, t_cy = 24.0 / 16 - 1, 8.0 / 16 - 0
    t_w, t_h = 8.0 / 64, 6.0 / 64
    logit = lambda p: math.log(p / (1 - p))
    head = _head_with(-30.0, {(0, 1): [logit(t_cx), logit(t_cy), logit(t_w), logit(t_h)]})
    head[0, 0, 1] = 30.0
    loss = detection_loss(Tensor(head), [gt])
    assert loss.item() < 1e-6


def test_detection_loss_hand_computed_single_object():
    gt = GtBox(20.0, 5.0, 28.0, 11.0)
    head = _head_with(0.25)
    head[1:, 0, 1] = [0.3, -0.2, 0.1, -0.4]
    loss = detection_loss(Tensor(head), [gt]).item()

    def bce(x, y):
        return max(x, 0) - x * y + math.log1p(math.exp(-abs(x)))

    def logit(t):
        t = min(max(t, 1e-3), 1 - 1e-3)
        return math.log(t / (1 - t))

    expected = sum(bce(0.25, 1.0 if (r, c) == (0, 1) else 0.0)
                   for r in range(4) for c in range(4)) / 16
    targets = [24.0 / 16 - 1, 8.0 / 16, 8.0 / 64, 6.0 / 64]
    expected += sum((v - logit(t)) ** 2
                    for v, t in zip([0.3, -0.2, 0.1, -0.4], targets))
    assert_close([loss], [expected], 1e-6)


def test_detection_loss_rejects_out_of_frame_gt():
    with pytest.raises(ValueError, match="outside"):
        detection_loss(Tensor(np.zeros((5, 4, 4))), [GtBox(60.0, 60.0, 70.0, 70.0)])


def test_detection_loss_batched_matches_mean_of_singles():
    rng = np.random.default_rng(5)
    heads = rng.uniform(-1, 1, (3, 5, 4, 4)).astype(np.float32)
    gts = [[GtBox(10, 10, 16, 15)], [], [GtBox(40, 40, 47, 48), GtBox(5, 50, 12, 56)]]
    batched = detection_loss(Tensor(heads), gts).item()

    # direct float64 recomputation of the documented formula
    def logit(t):
        t = np.clip(t, 1e-3, 1 - 1e-3)
        return np.log(t / (1 - t))

    total_bce, total_se, total_pos = 0.0, 0.0, 0
    for i, boxes in enumerate(gts):
        t_obj = np.zeros(16)
        t_box = np.zeros((4, 16))
        for g in boxes:
            cx, cy = (g.x1 + g.x2) / 2, (g.y1 + g.y2) / 2
            col, row = int(cx // 16), int(cy // 16)
            idx = row * 4 + col
            t_obj[idx] = 1
            t_box[:, idx] = logit(np.array([cx / 16 - col, cy / 16 - row,
                                            (g.x2 - g.x1) / 64, (g.y2 - g.y1) / 64]))
        x = heads[i].reshape(5, 16).astype(np.float64)
        total_bce += (np.maximum(x[0], 0) - x[0] * t_obj
                      + np.log1p(np.exp(-np.abs(x[0])))).sum()
        total_se += (((x[1:] - t_box) ** 2) * t_obj[None, :]).sum()
        total_pos += int(t_obj.sum())
    expected = total_bce / (3 * 16) + total_se / max(1, total_pos)
    assert_close([batched], [expected], 1e-5)


# ---------------------------------------------------------------------------
# decode + NMS
# ---------------------------------------------------------------------------

def test_decode_all_low_logits_empty():
    head = np.full((5, 4, 4), -10.0, dtype=np.float32)
    assert decode(head, conf_threshold=0.25) == []


def test_nms_suppresses_duplicate():
    a = DetBox(10, 10, 20, 20, 0.9)
    b = DetBox(10, 10, 20, 20, 0.8)
    kept = nms([a, b], 0.5)
    assert kept == [a]


def test_nms_matches_bruteforce_on_fixture():
    boxes = [
        DetBox(10, 10, 20, 20, 0.9),
        DetBox(12, 11, 22, 21, 0.85),
        DetBox(40, 40, 50, 50, 0.7),
        DetBox(41, 42, 49, 51, 0.95),
        DetBox(10, 40, 18, 48, 0.5),
    ]
    assert nms(boxes, 0.5) == nms_oracle(boxes, 0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=100_000))
def test_decode_nms_order_invariant(seed):
    rng = np.random.default_rng(seed)
    boxes = []
    for _ in range(int(rng.integers(2, 10))):
        x1, y1 = rng.uniform(0, 50, 2)
        boxes.append(DetBox(x1, y1, x1 + rng.uniform(3, 12), y1 + rng.uniform(3, 12),
                            float(rng.uniform(0.05, 1.0))))
    shuffled = [boxes[i] for i in rng.permutation(len(boxes))]
    assert nms(boxes, 0.5) == nms(shuffled, 0.5)


def test_decode_boxes_stay_in_frame():
    rng = np.random.default_rng(8)
    head = rng.uniform(-3, 3, (5, 4, 4)).astype(np.float32)
    head[0] = 5.0
    for b in decode(head, conf_threshold=0.25):
        assert 0.0 <= b.x1 < b.x2 <= 64.0
        assert 0.0 <= b.y1 < b.y2 <= 64.0


def test_decode_rejects_bad_threshold():
    with pytest.raises(ValueError):
        decode(np.zeros((5, 4, 4), dtype=np.float32), conf_threshold=1.5)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def test_evaluate_perfect_detections():
    gts = [[GtBox(10, 10, 20, 20)], [GtBox(30, 30, 40, 42)]]
    dets = [[DetBox(10, 10, 20, 20, 0.99)], [DetBox(30, 30, 40, 42, 0.99)]]
    m = evaluate(dets, gts)
    assert (m.precision, m.recall, m.f_measure, m.map50) == (1.0, 1.0, 1.0, 1.0)
    assert not m.undefined


def test_evaluate_no_detections():
    gts = [[GtBox(10, 10, 20, 20)]]
    m = evaluate([[]], gts)
    assert m.recall == 0.0 and m.map50 == 0.0 and not m.undefined


def test_evaluate_empty_empty_is_flagged_undefined():
    m = evaluate([[]], [[]])
    assert m.undefined
    assert (m.precision, m.recall, m.f_measure, m.map50) == (0.0, 0.0, 0.0, 0.0)


def test_evaluate_three_frame_fixture():
    # 2 TP, 1 FP, 1 FN at the 0.25 operating point
    gts = [[GtBox(10, 10, 20, 20)], [GtBox(30, 30, 40, 40)], [GtBox(5, 5, 12, 12)]]
    dets = [
        [DetBox(10, 10, 20, 20, 0.9)],                       # TP
        [DetBox(30, 30, 40, 40, 0.8), DetBox(50, 50, 60, 60, 0.6)],  # TP + FP
        [],                                                   # FN
    ]
    m = evaluate(dets, gts)
    assert m.precision == pytest.approx(2 / 3)
    assert m.recall == pytest.approx(2 / 3)
    assert m.f_measure == pytest.approx(2 / 3)
    assert_close([m.map50], [ap_oracle(dets, gts)], 1e-6)


def test_evaluate_matches_ap_oracle_on_random_instances():
    rng = np.random.default_rng(123)
    for _ in range(100):
        dets, gts = _random_instance(rng)
        m = evaluate(dets, gts)
        assert_close([m.map50], [ap_oracle(dets, gts)], 1e-6)


def test_removing_false_positive_never_hurts():
    gts = [[GtBox(10, 10, 20, 20)], [GtBox(30, 30, 40, 40)]]
    dets = [
        [DetBox(10, 10, 20, 20, 0.9), DetBox(50, 50, 60, 60, 0.95)],  # high-conf FP
        [DetBox(30, 30, 40, 40, 0.8)],
    ]
    base = evaluate(dets, gts)
    without_fp = evaluate([[dets[0][0]], dets[1]], gts)
    assert without_fp.precision >= base.precision
    assert without_fp.map50 >= base.map50


def test_evaluate_misaligned_frames_rejected():
    with pytest.raises(ValueError, match="aligned"):
        evaluate([[]], [[], []])


def test_gt_only_no_dets_not_undefined_and_reverse():
    m = evaluate([[DetBox(1, 1, 5, 5, 0.9)]], [[]])
    assert not m.undefined
    assert m.precision == 0.0 and m.map50 == 0.0


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

def test_detection_csv_roundtrip(tmp_path):
    frames = [("v1:0", [DetBox(1.0, 2.0, 5.0, 6.0, 0.75)]),
              ("v1:1", [DetBox(3.0, 3.0, 9.0, 9.0, 0.5), DetBox(20, 20, 30, 31, 0.25)])]
    path = tmp_path / "dets.csv"
    write_detections_csv(path, frames)
    back = read_detections_csv(path)
    assert set(back) == {"v1:0", "v1:1"}
    assert back["v1:1"][0].conf == pytest.approx(0.5)


def test_gt_csv_roundtrip_and_validation(tmp_path):
    path = tmp_path / "gt.csv"
    write_gt_csv(path, [("f0", [GtBox(1, 1, 8, 9)])])
    back = read_gt_csv(path)
    assert back["f0"][0].x2 == pytest.approx(8.0)
    bad = tmp_path / "bad.csv"
    bad.write_text("frame_id,x1,y1,x2,y2\nf0,60,60,70,70\n")
    with pytest.raises(ValueError, match="outside"):
        read_gt_csv(bad)
