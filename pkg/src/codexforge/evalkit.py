"""Every metric the pipeline reports: classification (accuracy, precision,
recall, F1, ROC-AUC, PR-AUC) and detection (greedy IoU matching, 101-point
interpolated AP, mAP over an IoU range), plus the mask-to-box converter
used to compare against segmentation baselines.

All functions are pure over immutable inputs and safe to run per-image in
parallel with a final reduction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .catalog import BoundingBox
from .inference import iou


class EvalError(Exception):
    pass


class DegenerateLabels(EvalError):
    """Scored items contain only one class."""


class NoGroundTruth(EvalError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise EvalError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class ScoredLabel:
    score: float
    is_positive: bool


def classification_metrics(counts: ConfusionCounts) -> dict[str, float]:
    """Accuracy, precision, recall, and F1; 0 where a denominator is 0."""
    tp, fp, fn, tn = counts.tp, counts.fp, counts.fn, counts.tn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = (tp + tn) / counts.total if counts.total else 0.0
    return {"accuracy": accuracy, "precision": precision, "recall": recall, "f1": f1}


def confusion_from_labels(truth: Sequence[bool], predicted: Sequence[bool]) -> ConfusionCounts:
    if len(truth) != len(predicted):
        raise EvalError(f"{len(truth)} labels vs {len(predicted)} predictions")
    tp = sum(1 for t, p in zip(truth, predicted) if t and p)
    fp = sum(1 for t, p in zip(truth, predicted) if not t and p)
    fn = sum(1 for t, p in zip(truth, predicted) if t and not p)
    tn = len(truth) - tp - fp - fn
    return ConfusionCounts(tp, fp, fn, tn)


def _split_scores(items: Iterable[ScoredLabel]) -> tuple[np.ndarray, np.ndarray]:
    scores, labels = [], []
    for item in items:
        if not np.isfinite(item.score):
            raise EvalError(f"non-finite score {item.score}")
        scores.append(item.score)
        labels.append(bool(item.is_positive))
    return np.asarray(scores, dtype=np.float64), np.asarray(labels, dtype=bool)


def roc_auc(items: Iterable[ScoredLabel]) -> float:
    """Probability that a random positive outranks a random negative,
    ties counted one half (Mann-Whitney U via rank sums)."""
    scores, labels = _split_scores(items)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels(f"need both classes, got {n_pos} positives / {n_neg} negatives")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1  # average rank, 1-based
        i = j + 1
    rank_sum_pos = float(ranks[labels].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2
    return u / (n_pos * n_neg)


def pr_auc(items: Iterable[ScoredLabel]) -> float:
    """Area under the precision-recall step curve: a descending-score sweep
    accumulating sum((R_i - R_{i-1}) * P_i) at each distinct score."""
    scores, labels = _split_scores(items)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DegenerateLabels("need at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    scores = scores[order]
    labels = labels[order]
    area = 0.0
    prev_recall = 0.0
    tp = fp = 0
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j + 1 < n and scores[j + 1] == scores[i]:
            j += 1
        tp += int(labels[i : j + 1].sum())
        fp += (j - i + 1) - int(labels[i : j + 1].sum())
        recall = tp / n_pos
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return area


@dataclass(frozen=True)
class MatchResult:
    """Per-detection TP/FP flags at one IoU threshold, confidence-ordered."""

    confidences: tuple[float, ...]
    is_tp: tuple[bool, ...]
    num_gt: int

    @property
    def tp(self) -> int:
        return sum(self.is_tp)

    @property
    def fp(self) -> int:
        return len(self.is_tp) - self.tp

    @property
    def unmatched_gt(self) -> int:
        return self.num_gt - self.tp

    def counts(self) -> ConfusionCounts:
        return ConfusionCounts(tp=self.tp, fp=self.fp, fn=self.unmatched_gt)


def _det_order(box: BoundingBox):
    return (-box.confidence, box.x_min, box.y_min, box.x_max, box.y_max)


def _mostly_inside(det: BoundingBox, region: BoundingBox) -> bool:
    inter_w = min(det.x_max, region.x_max) - max(det.x_min, region.x_min)
    inter_h = min(det.y_max, region.y_max) - max(det.y_min, region.y_min)
    if inter_w <= 0 or inter_h <= 0:
        return False
    return inter_w * inter_h / det.area >= 0.5


def match_detections(
    detections: Sequence[BoundingBox],
    ground_truth: Sequence[BoundingBox],
    iou_threshold: float,
    ignore_regions: Sequence[BoundingBox] = (),
) -> MatchResult:
    """Greedy matching in descending confidence.

    A detection is a TP when its best-IoU *unmatched* ground-truth box
    reaches the threshold; each ground-truth box is consumed at most once.
    A detection that fails to match but lies mostly inside an ignore
    region (half its area or more) is dropped entirely: neither TP nor FP.
    Ignore regions let unannotated sub-illustration areas be studied
    without charging the detector for finding them.
    """
    ordered = sorted(detections, key=_det_order)
    used = [False] * len(ground_truth)
    confidences: list[float] = []
    flags: list[bool] = []
    for det in ordered:
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(ground_truth):
            if used[j]:
                continue
            overlap = iou(det, gt)
            if overlap > best_iou:
                best_iou = overlap
                best_j = j
        if best_j >= 0 and best_iou >= iou_threshold:
            used[best_j] = True
            confidences.append(det.confidence)
            flags.append(True)
        elif any(_mostly_inside(det, region) for region in ignore_regions):
            continue
        else:
            confidences.append(det.confidence)
            flags.append(False)
    return MatchResult(
        confidences=tuple(confidences),
        is_tp=tuple(flags),
        num_gt=len(ground_truth),
    )


RECALL_GRID = np.linspace(0.0, 1.0, 101)


def average_precision(
    detections_per_image: Sequence[Sequence[BoundingBox]],
    ground_truth_per_image: Sequence[Sequence[BoundingBox]],
    iou_threshold: float = 0.5,
) -> float:
    """101-point interpolated AP pooled over an image set.

    Matches are greedy per image; the pooled (confidence, flag) list is
    swept in descending confidence, and AP averages the precision envelope
    (max precision at recall >= r) over the 101-point recall grid.
    """
    if len(detections_per_image) != len(ground_truth_per_image):
        raise EvalError("detections and ground truth must cover the same images")
    pooled: list[tuple[float, bool]] = []
    total_gt = 0
    for dets, gts in zip(detections_per_image, ground_truth_per_image):
        total_gt += len(gts)
        result = match_detections(dets, gts, iou_threshold)
        pooled.extend(zip(result.confidences, result.is_tp))
    if total_gt == 0:
        raise NoGroundTruth("no ground-truth boxes in the evaluation set")
    if not pooled:
        return 0.0
    pooled.sort(key=lambda cf: -cf[0])
    flags = np.asarray([f for _, f in pooled], dtype=bool)
    tp_cum = np.cumsum(flags)
    fp_cum = np.cumsum(~flags)
    recall = tp_cum / total_gt
    precision = tp_cum / (tp_cum + fp_cum)
    # precision envelope: best precision achievable at recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    for r in RECALL_GRID:
        idx = np.searchsorted(recall, r, side="left")
        ap += envelope[idx] if idx < len(envelope) else 0.0
    return ap / len(RECALL_GRID)


MAP_IOU_RANGE = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


def map_range(
    detections_per_image: Sequence[Sequence[BoundingBox]],
    ground_truth_per_image: Sequence[Sequence[BoundingBox]],
) -> dict[str, float]:
    """mAP@0.5 and mAP@0.5:0.95 (mean AP over IoU 0.50..0.95 step 0.05)."""
    per_threshold = {
        t: average_precision(detections_per_image, ground_truth_per_image, t)
        for t in MAP_IOU_RANGE
    }
    return {
        "map_50": per_threshold[0.5],
        "map_50_95": float(np.mean(list(per_threshold.values()))),
        "per_threshold": per_threshold,
    }


@dataclass(frozen=True)
class BinaryMask:
    """Row-major boolean pixel mask."""

    width: int
    height: int
    bits: np.ndarray  # shape (height, width), dtype bool

    def __post_init__(self) -> None:
        if self.bits.shape != (self.height, self.width):
            raise EvalError(f"mask bits {self.bits.shape} != ({self.height},{self.width})")

    @classmethod
    def from_array(cls, array: np.ndarray) -> "BinaryMask":
        bits = np.asarray(array, dtype=bool)
        return cls(width=bits.shape[1], height=bits.shape[0], bits=bits)


# 8-connectivity for component labeling
_CONNECT_8 = np.ones((3, 3), dtype=bool)


def morphological_close(bits: np.ndarray, radius: int) -> np.ndarray:
    """Binary closing with a square structuring element of side 2r+1.

    The mask is padded by r first so dilation can extend past the original
    border; otherwise border regions erode incorrectly.
    """
    if radius < 0:
        raise EvalError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return np.asarray(bits, dtype=bool)
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    padded = np.pad(np.asarray(bits, dtype=bool), radius)
    dilated = ndimage.binary_dilation(padded, structure)
    eroded = ndimage.binary_erosion(dilated, structure)
    return eroded[radius:-radius, radius:-radius]


def masks_to_boxes(
    mask: BinaryMask, closing_radius_px: int = 10, min_area_px: int = 0
) -> list[BoundingBox]:
    """Convert a segmentation mask into detection-style boxes.

    Closing merges nearby regions, 8-connected components below
    min_area_px are dropped, and each surviving component yields its tight
    bounding box at confidence 1.0. Boxes are ordered by (y, x) of their
    top-left corner.
    """
    closed = morphological_close(mask.bits, closing_radius_px)
    labels, count = ndimage.label(closed, structure=_CONNECT_8)
    boxes = []
    for sl in ndimage.find_objects(labels):
        if sl is None:
            continue
        area = int((labels[sl] > 0).sum())
        if area < min_area_px:
            continue
        rows, cols = sl
        boxes.append(
            BoundingBox(
                x_min=float(cols.start),
                y_min=float(rows.start),
                x_max=float(cols.stop),
                y_max=float(rows.stop),
                confidence=1.0,
            )
        )
    boxes.sort(key=lambda b: (b.y_min, b.x_min))
    return boxes


def format_latex_row(name: str, values: Sequence[float]) -> str:
    """One result-table row with percent-formatted cells."""
    return f"{name} & " + "& ".join(f"{100 * v:.1f}\\%" for v in values) + "\\\\"


def format_text_table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    """Aligned-column plain-text table."""
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = []
    for r, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if r == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def write_metrics_json(path: Path | str, metrics: dict) -> None:
    Path(path).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
