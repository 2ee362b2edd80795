"""Instance pseudo-mask containers and their on-disk formats."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .overseg import SegmentGraph


def _freeze(arr):
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class InstanceMask:
    """One pseudo instance: its segments, covered vertices and provenance.

    source is "ncut:<iteration>", "freemask" or "merged:<cycle>".
    """

    segment_ids: np.ndarray
    vertex_ids: np.ndarray
    confidence: float
    source: str

    def __eq__(self, other):
        if not isinstance(other, InstanceMask):
            return NotImplemented
        return (
            self.confidence == other.confidence
            and self.source == other.source
            and np.array_equal(self.segment_ids, other.segment_ids)
            and np.array_equal(self.vertex_ids, other.vertex_ids)
        )

    def __hash__(self):
        return hash((self.confidence, self.source, self.segment_ids.tobytes()))

    def __post_init__(self):
        seg_ids = np.unique(np.asarray(self.segment_ids, dtype=np.int64))
        if not len(seg_ids):
            raise ValueError("mask has no segments")
        vert_ids = np.unique(np.asarray(self.vertex_ids, dtype=np.int64))
        if not 0.0 < self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in (0, 1], got {self.confidence}")
        object.__setattr__(self, "segment_ids", _freeze(seg_ids))
        object.__setattr__(self, "vertex_ids", _freeze(vert_ids))

    @classmethod
    def from_segments(cls, segment_ids, seg: SegmentGraph, confidence: float, source: str):
        """Build a mask from segment ids, deriving its vertex extent from seg."""
        segment_ids = np.unique(np.asarray(segment_ids, dtype=np.int64))
        if len(segment_ids) and (segment_ids[0] < 0 or segment_ids[-1] >= seg.num_segments):
            raise ValueError("segment id out of range for this SegmentGraph")
        verts = (
            np.concatenate([seg.segment_vertices[s] for s in segment_ids])
            if len(segment_ids)
            else np.empty(0, dtype=np.int64)
        )
        return cls(segment_ids=segment_ids, vertex_ids=verts, confidence=confidence, source=source)

    @property
    def num_vertices(self) -> int:
        return len(self.vertex_ids)


@dataclass(frozen=True)
class PseudoMaskSet:
    """Ordered pseudo masks; generators emit them in descending confidence."""

    masks: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))

    def __len__(self) -> int:
        return len(self.masks)

    def __iter__(self):
        return iter(self.masks)

    def segment_labels(self, num_segments: int) -> np.ndarray:
        """Per-segment instance index (order in this set), -1 where unassigned.

        Later masks win ties when masks overlap (merged sets may overlap)."""
        labels = np.full(num_segments, -1, dtype=np.int64)
        for i, m in enumerate(self.masks):
            labels[m.segment_ids] = i
        return labels

    def vertex_labels(self, num_vertices: int) -> np.ndarray:
        """Per-vertex instance index, -1 where unassigned."""
        labels = np.full(num_vertices, -1, dtype=np.int64)
        for i, m in enumerate(self.masks):
            labels[m.vertex_ids] = i
        return labels


def segment_iou(a: InstanceMask, b: InstanceMask) -> float:
    """Intersection over union of the two masks' segment-id sets."""
    inter = len(np.intersect1d(a.segment_ids, b.segment_ids, assume_unique=True))
    union = len(a.segment_ids) + len(b.segment_ids) - inter
    return inter / union if union else 0.0


def vertex_iou(a: InstanceMask, b: InstanceMask) -> float:
    """Intersection over union of the two masks' vertex sets."""
    inter = len(np.intersect1d(a.vertex_ids, b.vertex_ids, assume_unique=True))
    union = len(a.vertex_ids) + len(b.vertex_ids) - inter
    return inter / union if union else 0.0


# ---------------------------------------------------------------------------
# Pseudo-mask JSON: {"params": {...}, "masks": [{segment_ids, confidence, source}]}


def save_masks(masks: PseudoMaskSet, path, params: dict | None = None) -> None:
    doc = {
        "params": params or {},
        "masks": [
            {
                "segment_ids": [int(s) for s in m.segment_ids],
                "confidence": float(m.confidence),
                "source": m.source,
            }
            for m in masks
        ],
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_masks(path, seg: SegmentGraph) -> PseudoMaskSet:
    """Read a pseudo-mask JSON; vertex extents are rebuilt from seg."""
    with open(path, encoding="ascii") as fh:
        doc = json.load(fh)
    masks = [
        InstanceMask.from_segments(
            entry["segment_ids"], seg, float(entry["confidence"]), str(entry["source"])
        )
        for entry in doc["masks"]
    ]
    return PseudoMaskSet(masks=tuple(masks))


def export_benchmark(masks: PseudoMaskSet, num_vertices: int, out_dir, scene: str) -> Path:
    """Write benchmark-style predictions.

    <out_dir>/<scene>.txt lists "relative_mask_path confidence 1" per mask;
    each mask file under <out_dir>/pred_masks/ holds one 0/1 per vertex line.
    """
    out_dir = Path(out_dir)
    mask_dir = out_dir / "pred_masks"
    mask_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, m in enumerate(masks):
        rel = f"pred_masks/{scene}_{i:03d}.txt"
        flags = np.zeros(num_vertices, dtype=np.int8)
        flags[m.vertex_ids] = 1
        _write_atomic(out_dir / rel, "\n".join("1" if x else "0" for x in flags) + "\n")
        lines.append(f"{rel} {m.confidence!r} 1")
    index = out_dir / f"{scene}.txt"
    _write_atomic(index, "\n".join(lines) + "\n" if lines else "")
    return index


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text, encoding="ascii")
    os.replace(tmp, path)
