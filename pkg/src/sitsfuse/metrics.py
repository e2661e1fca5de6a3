"""Exact evaluation metrics: overall accuracy, per-class IoU, and panoptic
quality with instance matching.

Counts are integer accumulators (mergeable across shards); ratios are taken
once at report time, so sharded and single-pass results agree exactly. The
value one past the last class is treated as void and excluded everywhere.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MetricError(Exception):
    """Raised on malformed metric inputs or empty accumulators."""


@dataclass
class ConfusionMatrix:
    """Square count matrix, rows = target class, columns = predicted class."""

    n_classes: int
    counts: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.n_classes, self.n_classes), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (self.n_classes, self.n_classes):
                raise MetricError(f"confusion counts must be {self.n_classes}x{self.n_classes}")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.n_classes != self.n_classes:
            raise MetricError("cannot merge confusion matrices of different sizes")
        self.counts += other.counts
        return self


def confusion_update(cm: ConfusionMatrix, predicted: np.ndarray, target: np.ndarray) -> ConfusionMatrix:
    """Accumulate counts; targets equal to n_classes (void) are skipped."""
    predicted = np.asarray(predicted).ravel()
    target = np.asarray(target).ravel()
    if predicted.shape != target.shape:
        raise MetricError(f"prediction/target shape mismatch: {predicted.shape} vs {target.shape}")
    k = cm.n_classes
    if target.size and (target.min() < 0 or target.max() > k):
        raise MetricError(f"target values outside [0, {k}] (void = {k})")
    keep = target < k
    predicted = predicted[keep]
    target = target[keep]
    if predicted.size and (predicted.min() < 0 or predicted.max() >= k):
        raise MetricError(f"predicted values outside [0, {k})")
    flat = target * k + predicted
    cm.counts += np.bincount(flat, minlength=k * k).reshape(k, k)
    return cm


def miou(cm: ConfusionMatrix) -> tuple[float, dict[int, float]]:
    """Class-averaged IoU; classes absent from target and prediction are excluded."""
    if cm.total == 0:
        raise MetricError("confusion matrix is empty")
    diag = np.diag(cm.counts)
    denom = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - diag
    per_class = {int(k): float(diag[k] / denom[k]) for k in range(cm.n_classes) if denom[k] > 0}
    if not per_class:
        raise MetricError("no class has support in target or prediction")
    return float(np.mean(list(per_class.values()))), per_class


def overall_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise MetricError("confusion matrix is empty")
    return float(np.trace(cm.counts) / cm.total)


# ---------------------------------------------------------------------------
# panoptic matching
# ---------------------------------------------------------------------------

@dataclass
class PanopticMatchResult:
    """Instance matches at mask IoU > 0.5 plus per-class tallies.

    `pairs` holds (gt id, pred id, IoU, class-correct); every id appears in
    at most one pair (guaranteed by the strict > 0.5 threshold).
    """

    pairs: list[tuple[int, int, float, bool]]
    unmatched_gt: list[int]
    unmatched_pred: list[int]
    tallies: dict[int, dict[str, float]]  # class -> tp/fp/fn/iou_sum

    def merge(self, other: "PanopticMatchResult") -> "PanopticMatchResult":
        self.pairs += other.pairs
        self.unmatched_gt += other.unmatched_gt
        self.unmatched_pred += other.unmatched_pred
        for cls, t in other.tallies.items():
            mine = self.tallies.setdefault(cls, {"tp": 0, "fp": 0, "fn": 0, "iou_sum": 0.0})
            for key in mine:
                mine[key] += t[key]
        return self


def _tally(tallies: dict, cls: int) -> dict:
    return tallies.setdefault(int(cls), {"tp": 0, "fp": 0, "fn": 0, "iou_sum": 0.0})


def panoptic_match(
    gt_instances: np.ndarray,
    gt_classes: dict[int, int],
    pred_instances: np.ndarray,
    pred_classes: dict[int, int],
    void_mask: np.ndarray | None = None,
) -> PanopticMatchResult:
    """Match instances by mask IoU > 0.5; a true positive also needs the
    classes to agree, otherwise the geometric match counts FP plus FN.

    Background is id 0 and never an instance; void pixels are removed from
    both rasters before any IoU is computed.
    """
    gt = np.asarray(gt_instances, dtype=np.int64).copy()
    pred = np.asarray(pred_instances, dtype=np.int64).copy()
    if gt.shape != pred.shape:
        raise MetricError(f"instance raster shapes differ: {gt.shape} vs {pred.shape}")
    if void_mask is not None:
        void_mask = np.asarray(void_mask, dtype=bool)
        gt[void_mask] = 0
        pred[void_mask] = 0

    gt_ids = [int(i) for i in np.unique(gt) if i > 0]
    pred_ids = [int(i) for i in np.unique(pred) if i > 0]
    for i in gt_ids:
        if i not in gt_classes:
            raise MetricError(f"gt instance {i} has no class")
    for i in pred_ids:
        if i not in pred_classes:
            raise MetricError(f"predicted instance {i} has no class")

    gt_areas = {i: int((gt == i).sum()) for i in gt_ids}
    pred_areas = {i: int((pred == i).sum()) for i in pred_ids}
    both = (gt > 0) & (pred > 0)
    joint, counts = np.unique(
        gt[both].astype(np.int64) * (pred.max() + 1) + pred[both], return_counts=True
    ) if both.any() else (np.array([], dtype=np.int64), np.array([], dtype=np.int64))

    pairs = []
    matched_gt: set[int] = set()
    matched_pred: set[int] = set()
    tallies: dict[int, dict[str, float]] = {}
    base = int(pred.max()) + 1
    for code, inter in zip(joint, counts):
        g, p = int(code) // base, int(code) % base
        iou = inter / (gt_areas[g] + pred_areas[p] - inter)
        if iou > 0.5:
            correct = gt_classes[g] == pred_classes[p]
            pairs.append((g, p, float(iou), bool(correct)))
            matched_gt.add(g)
            matched_pred.add(p)
            if correct:
                t = _tally(tallies, gt_classes[g])
                t["tp"] += 1
                t["iou_sum"] += float(iou)
            else:
                _tally(tallies, gt_classes[g])["fn"] += 1
                _tally(tallies, pred_classes[p])["fp"] += 1

    unmatched_gt = [g for g in gt_ids if g not in matched_gt]
    unmatched_pred = [p for p in pred_ids if p not in matched_pred]
    for g in unmatched_gt:
        _tally(tallies, gt_classes[g])["fn"] += 1
    for p in unmatched_pred:
        _tally(tallies, pred_classes[p])["fp"] += 1
    return PanopticMatchResult(pairs, unmatched_gt, unmatched_pred, tallies)


@dataclass
class PanopticReport:
    per_class: dict[int, tuple[float, float, float]]  # class -> (SQ, RQ, PQ)
    sq: float
    rq: float
    pq: float


def pq_sq_rq(result: PanopticMatchResult) -> PanopticReport:
    """Per-class SQ/RQ/PQ and their unweighted means over supported classes.

    RQ = TP / (TP + FP/2 + FN/2); SQ = mean IoU over true-positive pairs;
    PQ = SQ * RQ. Classes with no instances on either side never enter the
    tallies, so they are excluded from the averages.
    """
    if not result.tallies:
        raise MetricError("no instances to score")
    per_class = {}
    for cls in sorted(result.tallies):
        t = result.tallies[cls]
        denom = t["tp"] + 0.5 * t["fp"] + 0.5 * t["fn"]
        rq = t["tp"] / denom if denom > 0 else 0.0
        sq = t["iou_sum"] / t["tp"] if t["tp"] > 0 else 0.0
        per_class[cls] = (sq, rq, sq * rq)
    sq_m = float(np.mean([v[0] for v in per_class.values()]))
    rq_m = float(np.mean([v[1] for v in per_class.values()]))
    pq_m = float(np.mean([v[2] for v in per_class.values()]))
    return PanopticReport(per_class, sq_m, rq_m, pq_m)


# ---------------------------------------------------------------------------
# reporting container
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    """Evaluation summary for one model on one fold."""

    task: str
    n_classes: int
    oa: float
    miou: float
    per_class_iou: dict[int, float]
    confusion: np.ndarray
    class_names: list[str] | None = None

    @classmethod
    def from_confusion(cls, task: str, cm: ConfusionMatrix, class_names: list[str] | None = None) -> "MetricReport":
        mean_iou, per_class = miou(cm)
        return cls(
            task=task,
            n_classes=cm.n_classes,
            oa=overall_accuracy(cm),
            miou=mean_iou,
            per_class_iou=per_class,
            confusion=cm.counts.copy(),
            class_names=class_names,
        )

    def _name(self, k: int) -> str:
        if self.class_names and k < len(self.class_names):
            return self.class_names[k]
        return f"class_{k:02d}"

    def to_json(self, path: Path | str) -> Path:
        payload = {
            "task": self.task,
            "n_classes": self.n_classes,
            "oa": self.oa,
            "miou": self.miou,
            "per_class_iou": {self._name(k): v for k, v in sorted(self.per_class_iou.items())},
            "confusion": self.confusion.tolist(),
        }
        path = Path(path)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path

    def to_csv(self, path: Path | str) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "class", "iou", "oa", "miou"])
            for k in sorted(self.per_class_iou):
                writer.writerow([f"class_{k}", self._name(k), repr(self.per_class_iou[k]), "", ""])
            writer.writerow(["aggregate", "", "", repr(self.oa), repr(self.miou)])
        return path
