"""Pseudo-dataset densification: fold confident external predictions into an
existing mask set under an IoU novelty gate, never dropping what is there."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .masks import InstanceMask, PseudoMaskSet, segment_iou, vertex_iou


@dataclass(frozen=True)
class MergePolicy:
    """top_k candidates ranked by confidence; a candidate enters only when its
    maximum IoU against everything already in the set stays at or below
    min_novelty_iou."""

    top_k: int = 50
    min_novelty_iou: float = 0.3
    iou_level: str = "segment"

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if not 0.0 <= self.min_novelty_iou < 1.0:
            raise ValueError(
                f"min_novelty_iou must lie in [0, 1), got {self.min_novelty_iou}"
            )
        if self.iou_level not in ("segment", "vertex"):
            raise ValueError(f"iou_level must be 'segment' or 'vertex', got {self.iou_level!r}")

    def as_dict(self) -> dict:
        return {
            "top_k": self.top_k,
            "min_novelty_iou": self.min_novelty_iou,
            "iou_level": self.iou_level,
        }


def _next_cycle(existing: PseudoMaskSet) -> int:
    cycles = [0]
    for m in existing:
        match = re.fullmatch(r"merged:(\d+)", m.source)
        if match:
            cycles.append(int(match.group(1)))
    return max(cycles) + 1


def merge_predictions(
    existing: PseudoMaskSet,
    candidates,
    policy: MergePolicy | None = None,
) -> PseudoMaskSet:
    """Grow a pseudo-mask set with novel high-confidence candidates.

    The top_k most confident candidates (stable on ties) are screened one by
    one, in descending confidence, against the growing output set; a candidate
    is accepted only when its maximum IoU against every mask already accepted
    stays at or below the novelty bound. The existing set is always a subset
    of the output. Accepted masks are retagged "merged:<cycle>" with the cycle
    number following the highest merge cycle already present.
    """
    policy = policy or MergePolicy()
    candidates = list(candidates)
    for c in candidates:
        if not np.isfinite(c.confidence):
            raise ValueError("candidate confidences must be finite")
    iou = segment_iou if policy.iou_level == "segment" else vertex_iou
    order = np.argsort([-c.confidence for c in candidates], kind="stable")
    top = [candidates[i] for i in order[: policy.top_k]]
    cycle = _next_cycle(existing)
    result = list(existing)
    for cand in top:
        if all(iou(cand, m) <= policy.min_novelty_iou for m in result):
            result.append(
                InstanceMask(
                    segment_ids=cand.segment_ids,
                    vertex_ids=cand.vertex_ids,
                    confidence=cand.confidence,
                    source=f"merged:{cycle}",
                )
            )
    return PseudoMaskSet(tuple(result))
