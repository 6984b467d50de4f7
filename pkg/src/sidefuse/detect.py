"""Single-scale detection head, loss, decoding with NMS, and evaluation.

The head maps the final 64x4x4 backbone tap to 5 channels per grid cell:
objectness logit, cell-relative center (cx, cy, sigmoid), and frame-relative
size (w, h, sigmoid). Boxes are continuous pixel coordinates in a 64x64
frame; areas use the continuous convention (no +1).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import engine as eg
from .engine import Tensor
from .engine.layers import Conv2dLayer

FRAME_SIZE = 64
GRID = 4
CELL = FRAME_SIZE // GRID
N_CELLS = GRID * GRID


@dataclass(frozen=True)
class GtBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate box {self}")


@dataclass(frozen=True)
class DetBox:
    x1: float
    y1: float
    x2: float
    y2: float
    conf: float


@dataclass
class EvalMetrics:
    precision: float
    recall: float
    f_measure: float
    map50: float
    undefined: bool = False


def validate_gt_box(box: GtBox, frame: int = FRAME_SIZE) -> None:
    if box.x1 < 0 or box.y1 < 0 or box.x2 > frame or box.y2 > frame:
        raise ValueError(f"ground-truth box outside {frame}x{frame} frame: {box}")


class DetectHead:
    """conv3x3 (silu) then conv1x1 to 5 channels over the 4x4 grid."""

    def __init__(self, prefix: str, c_in: int, rng: np.random.Generator):
        # objectness prior low, size prior small: biases [-2, 0, 0, -1.5, -1.5]
        self.conv1 = Conv2dLayer(f"{prefix}.conv1", c_in, c_in, 3, 1, 1, rng)
        self.conv2 = Conv2dLayer(
            f"{prefix}.conv2", c_in, 5, 1, 1, 0, rng,
            bias_init=np.array([-2.0, 0.0, 0.0, -1.5, -1.5], dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(eg.silu(self.conv1(x)))

    @property
    def params(self):
        return self.conv1.params + self.conv2.params


# box targets are expressed in the head's logit parametrization; the clamp
# keeps cell-boundary centers finite (0.16 px worst-case rounding)
_T_EPS = 1e-3


def _logit(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, _T_EPS, 1.0 - _T_EPS)
    return np.log(t / (1.0 - t)).astype(np.float32)


def _cell_targets(gt_boxes: list[GtBox]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Target objectness (16,), logit-space box targets (4,16), mask (16,)."""
    t_obj = np.zeros(N_CELLS, dtype=np.float32)
    t_box = np.zeros((4, N_CELLS), dtype=np.float32)
    for b in gt_boxes:
        validate_gt_box(b)
        cx, cy = (b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0
        col = min(GRID - 1, int(cx // CELL))
        row = min(GRID - 1, int(cy // CELL))
        idx = row * GRID + col
        if t_obj[idx]:
            raise ValueError(f"two ground-truth centers share grid cell {idx}")
        t_obj[idx] = 1.0
        t_box[0, idx] = _logit(cx / CELL - col)
        t_box[1, idx] = _logit(cy / CELL - row)
        t_box[2, idx] = _logit((b.x2 - b.x1) / FRAME_SIZE)
        t_box[3, idx] = _logit((b.y2 - b.y1) / FRAME_SIZE)
    return t_obj, t_box, t_obj.copy()


def detection_loss(head_out: Tensor, gt_boxes) -> Tensor:
    """BCE on objectness over all cells + squared error on boxes at positives.

    Loss = mean over every cell of the objectness BCE, plus the sum over
    positive cells of the four (pred - logit(target))^2 terms divided by
    max(1, number of positives). Box regression runs in the head's logit
    parametrization, which has no saturating tails; decoding applies the
    sigmoid. ``head_out`` is (5,4,4) or (N,5,4,4); ``gt_boxes`` a box list,
    or a list of box lists for a batch.
    """
    batched = head_out.data.ndim == 4
    ho = head_out if batched else head_out.reshape((1, 5, GRID, GRID))
    gt_lists = gt_boxes if batched else [gt_boxes]
    n = ho.data.shape[0]
    if len(gt_lists) != n:
        raise ValueError(f"got {len(gt_lists)} ground-truth lists for batch of {n}")

    t_obj = np.zeros((n, N_CELLS), dtype=np.float32)
    t_box = np.zeros((n, 4, N_CELLS), dtype=np.float32)
    mask = np.zeros((n, 4, N_CELLS), dtype=np.float32)
    for i, boxes in enumerate(gt_lists):
        o, bx, m = _cell_targets(boxes)
        t_obj[i] = o
        t_box[i] = bx
        mask[i, :, :] = m[None, :]

    flat = ho.reshape((n, 5, N_CELLS))
    obj_logits = flat.narrow(1, 0, 1).reshape((n, N_CELLS))
    box_pred = flat.narrow(1, 1, 4)

    obj_loss = eg.bce_with_logits(obj_logits, t_obj).mean()
    err = box_pred - Tensor(t_box)
    se = eg.mul(eg.mul(err, err), Tensor(mask))
    n_pos = max(1.0, float(t_obj.sum()))
    return obj_loss + se.sum() * (1.0 / n_pos)


def iou(a, b) -> float:
    """Intersection over union of two boxes (anything with x1,y1,x2,y2)."""
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    area_a = (a.x2 - a.x1) * (a.y2 - a.y1)
    area_b = (b.x2 - b.x1) * (b.y2 - b.y1)
    return inter / (area_a + area_b - inter)


def nms(boxes: list[DetBox], iou_threshold: float) -> list[DetBox]:
    """Greedy suppression by descending confidence at IoU > threshold."""
    order = sorted(boxes, key=lambda b: (-b.conf, b.x1, b.y1, b.x2, b.y2))
    kept: list[DetBox] = []
    for b in order:
        if all(iou(b, k) <= iou_threshold for k in kept):
            kept.append(b)
    return kept


def decode(head_out: np.ndarray, conf_threshold: float = 0.25,
           nms_iou: float = 0.5) -> list[DetBox]:
    """Decode one frame's raw head output (5,4,4) into boxes."""
    arr = head_out.data if isinstance(head_out, Tensor) else np.asarray(head_out)
    if arr.shape != (5, GRID, GRID):
        raise ValueError(f"decode expects (5,{GRID},{GRID}) head output, got {arr.shape}")
    if not (0.0 <= conf_threshold <= 1.0 and 0.0 <= nms_iou <= 1.0):
        raise ValueError("decode thresholds must lie in [0,1]")
    arr = arr.astype(np.float64)
    conf = 1.0 / (1.0 + np.exp(-arr[0]))
    txy = 1.0 / (1.0 + np.exp(-arr[1:3]))
    twh = 1.0 / (1.0 + np.exp(-arr[3:5]))
    boxes: list[DetBox] = []
    for row in range(GRID):
        for col in range(GRID):
            c = float(conf[row, col])
            if c < conf_threshold:
                continue
            cx = (col + float(txy[0, row, col])) * CELL
            cy = (row + float(txy[1, row, col])) * CELL
            w = float(twh[0, row, col]) * FRAME_SIZE
            h = float(twh[1, row, col]) * FRAME_SIZE
            boxes.append(DetBox(
                x1=max(0.0, cx - w / 2), y1=max(0.0, cy - h / 2),
                x2=min(float(FRAME_SIZE), cx + w / 2),
                y2=min(float(FRAME_SIZE), cy + h / 2), conf=c))
    return nms(boxes, nms_iou)


def _match_flags(detections: list[list[DetBox]], ground_truth: list[list[GtBox]],
                 iou_thresh: float) -> list[tuple[float, bool]]:
    """Greedy per-frame matching over all detections in global confidence order.

    Returns (conf, is_tp) per detection, ordered by (-conf, frame, insertion
    index). The greedy prefix property makes every prefix of this list equal
    to matching only that prefix.
    """
    flat = [(d.conf, fi, j, d)
            for fi, dets in enumerate(detections) for j, d in enumerate(dets)]
    flat.sort(key=lambda r: (-r[0], r[1], r[2]))
    matched: list[set[int]] = [set() for _ in ground_truth]
    flags: list[tuple[float, bool]] = []
    for conf, fi, _, det in flat:
        best_iou, best_k = 0.0, -1
        for k, g in enumerate(ground_truth[fi]):
            if k in matched[fi]:
                continue
            v = iou(det, g)
            if v > best_iou:
                best_iou, best_k = v, k
        if best_k >= 0 and best_iou >= iou_thresh:
            matched[fi].add(best_k)
            flags.append((conf, True))
        else:
            flags.append((conf, False))
    return flags


def average_precision(flags: list[tuple[float, bool]], n_gt: int) -> float:
    """All-point interpolated AP from per-detection (conf, tp) flags."""
    if n_gt == 0 or not flags:
        return 0.0
    tps = np.cumsum([1.0 if t else 0.0 for _, t in flags])
    ranks = np.arange(1, len(flags) + 1, dtype=np.float64)
    recall = tps / n_gt
    precision = tps / ranks
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    ap, prev_r = 0.0, 0.0
    for r, p in zip(recall, envelope):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def evaluate(detections: list[list[DetBox]], ground_truth: list[list[GtBox]],
             iou_thresh: float = 0.5, conf_for_prf: float = 0.25) -> EvalMetrics:
    """Greedy-matched precision/recall/F at a fixed confidence plus mAP@50.

    The degenerate no-GT/no-detection case reports zeros with
    ``undefined=True`` rather than inventing a convention.
    """
    if len(detections) != len(ground_truth):
        raise ValueError(
            f"frames not aligned: {len(detections)} detection frames vs "
            f"{len(ground_truth)} ground-truth frames")
    n_gt = sum(len(g) for g in ground_truth)
    n_det = sum(len(d) for d in detections)
    if n_gt == 0 and n_det == 0:
        return EvalMetrics(0.0, 0.0, 0.0, 0.0, undefined=True)

    flags = _match_flags(detections, ground_truth, iou_thresh)
    tp_at = sum(1 for c, t in flags if c >= conf_for_prf and t)
    det_at = sum(1 for c, _ in flags if c >= conf_for_prf)
    precision = tp_at / det_at if det_at else 0.0
    recall = tp_at / n_gt if n_gt else 0.0
    f_measure = (2 * precision * recall / (precision + recall)
                 if precision + recall > 0 else 0.0)
    return EvalMetrics(precision, recall, f_measure,
                       average_precision(flags, n_gt))


# ---------------------------------------------------------------------------
# CSV interchange: frame_id,x1,y1,x2,y2,conf (conf omitted for ground truth)
# ---------------------------------------------------------------------------

def write_detections_csv(path, frames: list[tuple[str, list[DetBox]]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_id", "x1", "y1", "x2", "y2", "conf"])
        for frame_id, boxes in frames:
            for b in boxes:
                w.writerow([frame_id, f"{b.x1:.4f}", f"{b.y1:.4f}",
                            f"{b.x2:.4f}", f"{b.y2:.4f}", f"{b.conf:.6f}"])


def write_gt_csv(path, frames: list[tuple[str, list[GtBox]]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_id", "x1", "y1", "x2", "y2"])
        for frame_id, boxes in frames:
            for b in boxes:
                w.writerow([frame_id, f"{b.x1:.4f}", f"{b.y1:.4f}",
                            f"{b.x2:.4f}", f"{b.y2:.4f}"])


def read_detections_csv(path) -> dict[str, list[DetBox]]:
    out: dict[str, list[DetBox]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["frame_id"], []).append(DetBox(
                float(row["x1"]), float(row["y1"]), float(row["x2"]),
                float(row["y2"]), float(row["conf"])))
    return out


def read_gt_csv(path) -> dict[str, list[GtBox]]:
    out: dict[str, list[GtBox]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            box = GtBox(float(row["x1"]), float(row["y1"]),
                        float(row["x2"]), float(row["y2"]))
            validate_gt_box(box)
            out.setdefault(row["frame_id"], []).append(box)
    return out
