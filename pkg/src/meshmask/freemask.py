"""Seed-based pseudo-mask proposals: feature-space FPS, thresholded salient
regions, maskness scoring and greedy NMS.

Unlike the masked-cut generator this one is deliberately dense: proposals may
overlap (below the NMS bound) and may span disconnected scene regions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .features import AffinityMatrix, FeatureMatrix, cosine_similarity
from .masks import InstanceMask, PseudoMaskSet
from .overseg import SegmentGraph


@dataclass(frozen=True)
class FreeMaskParams:
    """n_seeds=None picks min(32, segment count) at generation time."""

    n_seeds: int | None = None
    tau_sim: float = 0.65
    nms_iou: float = 0.5
    max_kept: int = 100

    def __post_init__(self):
        if self.n_seeds is not None and self.n_seeds < 1:
            raise ValueError(f"n_seeds must be >= 1, got {self.n_seeds}")
        if not 0.0 < self.tau_sim < 1.0:
            raise ValueError(f"tau_sim must lie in (0, 1), got {self.tau_sim}")
        if not 0.0 < self.nms_iou <= 1.0:
            raise ValueError(f"nms_iou must lie in (0, 1], got {self.nms_iou}")
        if self.max_kept < 1:
            raise ValueError(f"max_kept must be >= 1, got {self.max_kept}")

    def as_dict(self) -> dict:
        return {
            "n_seeds": self.n_seeds,
            "tau_sim": self.tau_sim,
            "nms_iou": self.nms_iou,
            "max_kept": self.max_kept,
        }


def _feature_rows(F) -> np.ndarray:
    rows = np.asarray(F.rows if isinstance(F, FeatureMatrix) else F, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    return rows


def farthest_point_sampling(F, n_seeds: int) -> np.ndarray:
    """Greedy max-min seed selection in feature space.

    The first seed is the row of maximal Euclidean norm; every next seed
    maximizes its minimum distance to the already chosen ones. Ties always go
    to the smallest row index, so the result is deterministic.
    """
    rows = _feature_rows(F)
    n = len(rows)
    if not 1 <= n_seeds <= n:
        raise ValueError(f"n_seeds must lie in [1, {n}], got {n_seeds}")
    seeds = np.empty(n_seeds, dtype=np.int64)
    seeds[0] = int(np.argmax(np.linalg.norm(rows, axis=1)))
    dist = np.linalg.norm(rows - rows[seeds[0]], axis=1)
    for i in range(1, n_seeds):
        seeds[i] = int(np.argmax(dist))
        dist = np.minimum(dist, np.linalg.norm(rows - rows[seeds[i]], axis=1))
    return seeds


def salient_regions(F, seeds, tau_sim: float):
    """Per-seed candidate masks: segments whose cosine to the seed is >= tau_sim.

    Every seed belongs to its own region (self-similarity is 1)."""
    A = cosine_similarity(_feature_rows(F)).values
    seeds = np.asarray(seeds, dtype=np.int64)
    return [A[s] >= tau_sim for s in seeds]


def maskness_score(mask, A, seg: SegmentGraph) -> float:
    """Mean pairwise within-mask similarity scaled by the mask's vertex share.

    The mean runs over all ordered segment pairs inside the mask (including
    self pairs), so a singleton scores its covered vertex fraction."""
    values = A.values if isinstance(A, AffinityMatrix) else np.asarray(A, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise ValueError("mask is empty")
    mean_sim = float(values[np.ix_(m, m)].mean())
    sizes = seg.segment_sizes
    return mean_sim * (float(sizes[m].sum()) / float(sizes.sum()))


def nms(masks, scores, nms_iou: float = 0.5, max_kept: int | None = None, segment_sizes=None) -> np.ndarray:
    """Greedy non-maximum suppression over candidate masks.

    Walks the masks in descending score order (stable on ties), keeps a mask
    only when its vertex IoU against every kept one stays below nms_iou, and
    stops after max_kept. Returns indices of the kept masks, best first.

    segment_sizes weights the IoU by per-segment vertex counts; without it
    every segment counts as one vertex.
    """
    if not 0.0 < nms_iou <= 1.0:
        raise ValueError(f"nms_iou must lie in (0, 1], got {nms_iou}")
    masks = [np.asarray(m, dtype=bool) for m in masks]
    scores = np.asarray(scores, dtype=np.float64)
    if len(masks) != len(scores):
        raise ValueError("masks and scores must align")
    if not masks:
        return np.empty(0, dtype=np.int64)
    if segment_sizes is None:
        sizes = np.ones(len(masks[0]), dtype=np.float64)
    else:
        sizes = np.asarray(segment_sizes, dtype=np.float64)
    areas = np.array([sizes[m].sum() for m in masks])
    order = np.argsort(-scores, kind="stable")
    kept: list[int] = []
    for idx in order:
        if max_kept is not None and len(kept) >= max_kept:
            break
        ok = True
        for j in kept:
            inter = sizes[masks[idx] & masks[j]].sum()
            union = areas[idx] + areas[j] - inter
            if union > 0 and inter / union >= nms_iou:
                ok = False
                break
        if ok:
            kept.append(int(idx))
    return np.asarray(kept, dtype=np.int64)


def freemask_generate(F, seg: SegmentGraph, params: FreeMaskParams | None = None) -> PseudoMaskSet:
    """Full seed-based proposal pipeline over one scene.

    FPS seeds -> thresholded salient regions -> maskness scores -> NMS.
    Confidences are the maskness scores mapped through (1 + s) / 2, which is
    monotone and lands in (0, 1] because a mask's mean within-similarity
    always exceeds -1 (self pairs contribute 1).
    """
    params = params or FreeMaskParams()
    rows = _feature_rows(F)
    n = len(rows)
    if n < 1:
        raise ValueError("need at least one segment")
    if n != seg.num_segments:
        raise ValueError(
            f"features have {n} rows but the segment graph has {seg.num_segments} segments"
        )
    n_seeds = params.n_seeds if params.n_seeds is not None else min(32, n)
    seeds = farthest_point_sampling(rows, n_seeds)
    regions = salient_regions(rows, seeds, params.tau_sim)
    A = cosine_similarity(rows)
    scores = np.array([maskness_score(m, A, seg) for m in regions])
    keep = nms(regions, scores, params.nms_iou, params.max_kept, seg.segment_sizes)
    masks = [
        InstanceMask.from_segments(
            np.flatnonzero(regions[i]), seg, (1.0 + scores[i]) / 2.0, "freemask"
        )
        for i in keep
    ]
    return PseudoMaskSet(tuple(masks))


class FreeMaskGenerator(BaseEstimator):
    """Estimator wrapper around :func:`freemask_generate`.

    fit(X, segments) stores the proposals under ``masks_``."""

    def __init__(
        self,
        n_seeds: int | None = None,
        tau_sim: float = 0.65,
        nms_iou: float = 0.5,
        max_kept: int = 100,
    ):
        self.n_seeds = n_seeds
        self.tau_sim = tau_sim
        self.nms_iou = nms_iou
        self.max_kept = max_kept

    def fit(self, X, segments: SegmentGraph):
        params = FreeMaskParams(
            n_seeds=self.n_seeds,
            tau_sim=self.tau_sim,
            nms_iou=self.nms_iou,
            max_kept=self.max_kept,
        )
        self.masks_ = freemask_generate(X, segments, params)
        self.labels_ = self.masks_.segment_labels(segments.num_segments)
        return self

    def fit_predict(self, X, segments: SegmentGraph) -> np.ndarray:
        return self.fit(X, segments).labels_
