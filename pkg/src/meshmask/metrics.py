"""Class-agnostic instance-segmentation evaluation on mesh vertices.

Average precision at vertex-IoU 25% and 50%, plus the mean over thresholds
0.50 to 0.95 in 0.05 steps. Matching is greedy in confidence order against
as-yet-unmatched ground-truth instances; precision-recall curves integrate
with the all-point (monotone precision envelope) rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .masks import PseudoMaskSet

AP_STRICT_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
AP_ALL_THRESHOLDS = (0.25,) + AP_STRICT_THRESHOLDS


@dataclass(frozen=True)
class GroundTruthSet:
    """Per-vertex instance ids; 0 marks unannotated vertices (ignored)."""

    vertex_instance_ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.vertex_instance_ids, dtype=np.int64).reshape(-1)
        if ids.size and ids.min() < 0:
            raise ValueError("instance ids must be >= 0")
        ids = np.ascontiguousarray(ids)
        ids.flags.writeable = False
        object.__setattr__(self, "vertex_instance_ids", ids)

    @property
    def num_vertices(self) -> int:
        return len(self.vertex_instance_ids)

    def instances(self) -> dict:
        """Instance id -> sorted vertex index array, ids >= 1 only."""
        ids = self.vertex_instance_ids
        out = {}
        for i in np.unique(ids):
            if i >= 1:
                out[int(i)] = np.flatnonzero(ids == i)
        return out

    def ignore_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.vertex_instance_ids == 0)


def load_ground_truth(path) -> GroundTruthSet:
    ids = np.loadtxt(path, dtype=np.int64, ndmin=1)
    return GroundTruthSet(vertex_instance_ids=ids)


def save_ground_truth(gt: GroundTruthSet, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(str(int(i)) for i in gt.vertex_instance_ids))
        fh.write("\n")


@dataclass(frozen=True)
class APReport:
    """ap_mean averages the strict thresholds 0.50..0.95; curves maps each
    threshold to its (precision, recall) arrays in rank order."""

    ap25: float
    ap50: float
    ap_mean: float
    curves: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "ap25": self.ap25,
            "ap50": self.ap50,
            "ap_mean": self.ap_mean,
            "curves": {
                f"{t:.2f}": {
                    "precision": [float(x) for x in p],
                    "recall": [float(x) for x in r],
                }
                for t, (p, r) in sorted(self.curves.items())
            },
        }


def mask_iou(a, b, ignore=None) -> float:
    """Vertex IoU of two index sets after dropping ignored vertices.

    An empty union (both sets fully ignored or empty) counts as 0."""
    a = np.unique(np.asarray(a, dtype=np.int64))
    b = np.unique(np.asarray(b, dtype=np.int64))
    if ignore is not None and len(ignore):
        ignore = np.asarray(ignore, dtype=np.int64)
        a = np.setdiff1d(a, ignore, assume_unique=True)
        b = np.setdiff1d(b, ignore, assume_unique=True)
    inter = len(np.intersect1d(a, b, assume_unique=True))
    union = len(a) + len(b) - inter
    return inter / union if union else 0.0


def _average_precision(tp_flags: np.ndarray, n_gt: int) -> tuple:
    """All-point interpolated AP from rank-ordered TP flags.

    Returns (ap, precision, recall)."""
    if len(tp_flags) == 0 or n_gt == 0:
        return 0.0, np.empty(0), np.empty(0)
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    ap = float(np.sum((recall - prev) * envelope))
    return ap, precision, recall


def _match_scene(preds: PseudoMaskSet, gt: GroundTruthSet, threshold: float):
    """Greedy confidence-ordered matching for one scene at one threshold.

    Returns (confidences, tp_flags, n_gt) in prediction rank order."""
    instances = gt.instances()
    ignore = gt.ignore_vertices()
    gt_ids = sorted(instances)
    order = np.argsort([-m.confidence for m in preds], kind="stable")
    confidences = np.array([preds.masks[i].confidence for i in order])
    flags = np.zeros(len(order), dtype=bool)
    matched = set()
    for rank, i in enumerate(order):
        mask = preds.masks[i]
        best_iou = 0.0
        best_gt = None
        for g in gt_ids:
            if g in matched:
                continue
            iou = mask_iou(mask.vertex_ids, instances[g], ignore)
            if iou >= threshold and iou > best_iou:
                best_iou = iou
                best_gt = g
        if best_gt is not None:
            matched.add(best_gt)
            flags[rank] = True
    return confidences, flags, len(gt_ids)


def evaluate_ap(preds: PseudoMaskSet, gt: GroundTruthSet, thresholds=AP_ALL_THRESHOLDS) -> APReport:
    """Class-agnostic AP of one scene's predictions against vertex ground truth.

    Predictions must carry confidences and non-empty vertex sets; ground truth
    must contain at least one instance. Ties in confidence keep input order,
    and a prediction matches the unmatched instance of highest IoU at or above
    each threshold.
    """
    return evaluate_scenes([(preds, gt)], thresholds=thresholds)


def evaluate_scenes(scene_pairs, thresholds=AP_ALL_THRESHOLDS, mode: str = "pooled") -> APReport:
    """Evaluate (predictions, ground truth) pairs.

    pooled    : matches from all scenes are ranked together before the
                precision-recall integration (benchmark style).
    per_scene : AP is computed per scene and averaged.
    """
    if mode not in ("pooled", "per_scene"):
        raise ValueError(f"mode must be 'pooled' or 'per_scene', got {mode!r}")
    scene_pairs = list(scene_pairs)
    if not scene_pairs:
        raise ValueError("no scenes to evaluate")
    for preds, gt in scene_pairs:
        for m in preds:
            if m.num_vertices == 0:
                raise ValueError("predictions with empty vertex sets are not allowed")
        if not gt.instances():
            raise ValueError("ground truth contains no instances")

    ap = {}
    curves = {}
    for t in thresholds:
        if mode == "pooled":
            confs, flags, n_gt = [], [], 0
            for preds, gt in scene_pairs:
                c, f, n = _match_scene(preds, gt, t)
                confs.append(c)
                flags.append(f)
                n_gt += n
            confs = np.concatenate(confs) if confs else np.empty(0)
            flags = np.concatenate(flags) if flags else np.empty(0, dtype=bool)
            order = np.argsort(-confs, kind="stable")
            ap[t], precision, recall = _average_precision(flags[order], n_gt)
            curves[t] = (precision, recall)
        else:
            per = []
            for preds, gt in scene_pairs:
                c, f, n = _match_scene(preds, gt, t)
                per.append(_average_precision(f, n)[0])
            ap[t] = float(np.mean(per))
            curves[t] = (np.empty(0), np.empty(0))

    strict = [ap[t] for t in AP_STRICT_THRESHOLDS if t in ap]
    return APReport(
        ap25=ap.get(0.25, 0.0),
        ap50=ap.get(0.50, 0.0),
        ap_mean=float(np.mean(strict)) if strict else 0.0,
        curves=curves,
    )


def save_report(report: APReport, json_path, table_path=None) -> None:
    """Emit the report as JSON and, optionally, an aligned text table."""
    with open(json_path, "w", encoding="ascii") as fh:
        json.dump(report.as_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    if table_path is not None:
        with open(table_path, "w", encoding="ascii") as fh:
            fh.write(format_report(report))


def format_report(report: APReport) -> str:
    rows = [("metric", "value"), ("AP@25", f"{report.ap25:.4f}"),
            ("AP@50", f"{report.ap50:.4f}"), ("AP", f"{report.ap_mean:.4f}")]
    width = max(len(r[0]) for r in rows)
    lines = [f"{name:<{width}}  {value}" for name, value in rows]
    lines.insert(1, "-" * (width + 8))
    return "\n".join(lines) + "\n"
