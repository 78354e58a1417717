"""Per-frame accuracy metrics for the three query types.

Count accuracy per frame is max(0, 1 - |returned - correct| / max(correct, 1)),
so an exactly-right zero counts as 1.0. Detection accuracy is per-frame
average precision at one IOU threshold with greedy score-ordered matching;
frames where both truth and predictions are empty score 1.0 so empty scenes
do not poison video averages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Box = tuple[float, float, float, float]


class MetricsError(ValueError):
    pass


@dataclass
class AccuracyReport:
    query_type: str
    frames: list[int]
    per_frame: np.ndarray
    average: float
    invoked_fraction: float | None = None


def _check_frames(pred: dict, truth: dict) -> list[int]:
    if set(pred) != set(truth):
        missing = sorted(set(truth) ^ set(pred))
        raise MetricsError(f"frame ranges differ (first diff at {missing[:3]})")
    return sorted(pred)


def binary_accuracy(pred: dict[int, bool], truth: dict[int, bool]) -> AccuracyReport:
    frames = _check_frames(pred, truth)
    vals = np.array([1.0 if bool(pred[f]) == bool(truth[f]) else 0.0 for f in frames])
    return AccuracyReport("binary_classification", frames, vals, float(vals.mean()))


def count_accuracy(pred: dict[int, int], truth: dict[int, int]) -> AccuracyReport:
    frames = _check_frames(pred, truth)
    vals = []
    for f in frames:
        p, t = int(pred[f]), int(truth[f])
        if p < 0 or t < 0:
            raise MetricsError(f"negative count at frame {f}")
        vals.append(max(0.0, 1.0 - abs(p - t) / max(t, 1)))
    arr = np.array(vals)
    return AccuracyReport("counting", frames, arr, float(arr.mean()))


def iou(box_a: Box, box_b: Box) -> float:
    ax1, ay1, ax2, ay2 = box_a
    bx1, by1, bx2, by2 = box_b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0:
        return 0.0
    return inter / union


def frame_average_precision(
    pred: list[tuple[Box, float]], truth: list[Box], iou_threshold: float = 0.5
) -> float:
    """Single-class AP on one frame: score-ordered greedy matching, then the
    area under the precision envelope."""
    if not truth:
        return 1.0 if not pred else 0.0
    if not pred:
        return 0.0
    order = sorted(range(len(pred)), key=lambda i: (-pred[i][1], pred[i][0]))
    matched = [False] * len(truth)
    tp = np.zeros(len(pred))
    for rank, i in enumerate(order):
        box = pred[i][0]
        best_j, best_iou = -1, 0.0
        for j, tbox in enumerate(truth):
            if matched[j]:
                continue
            v = iou(box, tbox)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0 and best_iou >= iou_threshold:
            matched[best_j] = True
            tp[rank] = 1.0
    cum_tp = np.cumsum(tp)
    precision = cum_tp / np.arange(1, len(pred) + 1)
    recall = cum_tp / len(truth)
    # precision envelope, integrated over recall
    env = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for p, r in zip(env, recall):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def detection_accuracy(
    pred: dict[int, list[tuple[Box, float]]],
    truth: dict[int, list[Box]],
    iou_threshold: float = 0.5,
) -> AccuracyReport:
    if not (0.0 < iou_threshold < 1.0):
        raise MetricsError("iou_threshold must be in (0, 1)")
    frames = _check_frames(pred, truth)
    vals = np.array(
        [frame_average_precision(pred[f], truth[f], iou_threshold) for f in frames]
    )
    return AccuracyReport("detection", frames, vals, float(vals.mean()))
