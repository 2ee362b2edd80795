"""Per-vertex feature ingestion, per-segment aggregation and similarity matrices.

Feature extraction itself happens upstream; this module consumes FMAT files
(one modality per file), pools rows over segments, and turns the pooled rows
into cosine-similarity and thresholded saliency matrices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .overseg import SegmentGraph

FMAT_MAGIC = b"FMAT"
FMAT_VERSION = 1

MODALITIES = ("geometry3d", "color2d", "other")
KINDS = ("raw_cosine", "saliency")


class FmatError(ValueError):
    """Malformed FMAT payload."""


def _freeze(arr):
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class VertexFeatures:
    """V x D feature rows, one row per mesh vertex."""

    rows: np.ndarray
    modality: str = "other"

    def __post_init__(self):
        rows = np.asarray(self.rows)
        if rows.ndim != 2:
            raise ValueError("feature rows must be a 2-D matrix")
        if not np.all(np.isfinite(rows)):
            raise ValueError("feature rows contain non-finite values")
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        object.__setattr__(self, "rows", _freeze(rows))

    @property
    def num_vertices(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class FeatureMatrix:
    """N x D aggregated feature rows, one row per segment."""

    rows: np.ndarray
    modality: str = "other"

    def __post_init__(self):
        rows = np.asarray(self.rows)
        if rows.ndim != 2:
            raise ValueError("feature rows must be a 2-D matrix")
        if not np.all(np.isfinite(rows)):
            raise ValueError("feature rows contain non-finite values")
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        object.__setattr__(self, "rows", _freeze(rows))

    @property
    def num_segments(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class AffinityMatrix:
    """Symmetric N x N segment affinity; either raw cosine or {eps, 1} saliency."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError("affinity matrix must be square")
        if not np.all(np.isfinite(values)):
            raise ValueError("affinity matrix contains non-finite values")
        if self.kind not in KINDS:
            raise ValueError(f"unknown affinity kind {self.kind!r}")
        if values.size and np.abs(values - values.T).max() > 1e-9:
            raise ValueError("affinity matrix is not symmetric")
        object.__setattr__(self, "values", _freeze(values))

    @property
    def num_segments(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# FMAT binary format: magic "FMAT", u32 version, u64 rows, u64 cols,
# then rows*cols little-endian float32, row-major.


def load_vertex_features(path, modality: str = "other") -> VertexFeatures:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 24:
        raise FmatError(f"{path}: file too short for an FMAT header")
    if data[:4] != FMAT_MAGIC:
        raise FmatError(f"{path}: bad magic {data[:4]!r}, expected {FMAT_MAGIC!r}")
    version, rows, cols = struct.unpack_from("<IQQ", data, 4)
    if version != FMAT_VERSION:
        raise FmatError(f"{path}: unsupported FMAT version {version}")
    need = rows * cols * 4
    have = len(data) - 24
    if have != need:
        raise FmatError(
            f"{path}: header declares {rows}x{cols} ({need} bytes), payload has {have}"
        )
    mat = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=24).reshape(rows, cols)
    if not np.all(np.isfinite(mat)):
        bad = int(np.flatnonzero(~np.isfinite(mat.ravel()))[0])
        raise FmatError(f"{path}: non-finite value at row {bad // cols}, col {bad % cols}")
    return VertexFeatures(rows=mat, modality=modality)


def save_vertex_features(vf: VertexFeatures, path) -> None:
    path = Path(path)
    rows, cols = vf.rows.shape
    with open(path, "wb") as fh:
        fh.write(FMAT_MAGIC)
        fh.write(struct.pack("<IQQ", FMAT_VERSION, rows, cols))
        fh.write(np.ascontiguousarray(vf.rows, dtype="<f4").tobytes())


def aggregate_features(vf: VertexFeatures, seg: SegmentGraph, agg: str = "mean") -> FeatureMatrix:
    """Pool per-vertex features over segments (arithmetic mean by default)."""
    if vf.num_vertices != len(seg.segment_of_vertex):
        raise ValueError(
            f"feature rows ({vf.num_vertices}) do not match vertex count "
            f"({len(seg.segment_of_vertex)})"
        )
    if agg not in ("mean", "median"):
        raise ValueError(f"agg must be 'mean' or 'median', got {agg!r}")
    rows = np.asarray(vf.rows, dtype=np.float64)
    if agg == "mean":
        sums = np.zeros((seg.num_segments, rows.shape[1]))
        np.add.at(sums, seg.segment_of_vertex, rows)
        out = sums / seg.segment_sizes[:, None]
    else:
        out = np.stack([np.median(rows[v], axis=0) for v in seg.segment_vertices])
    return FeatureMatrix(rows=out, modality=vf.modality)


def cosine_similarity(F: FeatureMatrix | np.ndarray) -> AffinityMatrix:
    """Pairwise cosine similarity of feature rows.

    Rows with zero norm get 0 off-diagonal; the diagonal is pinned to 1.
    """
    rows = np.asarray(F.rows if isinstance(F, FeatureMatrix) else F, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = rows / safe[:, None]
    A = unit @ unit.T
    A = np.clip(0.5 * (A + A.T), -1.0, 1.0)
    np.fill_diagonal(A, 1.0)
    return AffinityMatrix(values=A, kind="raw_cosine")


def fuse_similarities(A2d: AffinityMatrix, A3d: AffinityMatrix, w2d: float) -> AffinityMatrix:
    """Weighted average w2d * A2d + (1 - w2d) * A3d of two cosine matrices."""
    if not 0.0 <= w2d <= 1.0:
        raise ValueError(f"w2d must lie in [0, 1], got {w2d}")
    if A2d.kind != "raw_cosine" or A3d.kind != "raw_cosine":
        raise ValueError("fusion expects raw_cosine affinity matrices")
    if A2d.values.shape != A3d.values.shape:
        raise ValueError(
            f"affinity shapes differ: {A2d.values.shape} vs {A3d.values.shape}"
        )
    return AffinityMatrix(values=w2d * A2d.values + (1.0 - w2d) * A3d.values, kind="raw_cosine")


def fuse_features(F2d: FeatureMatrix, F3d: FeatureMatrix, w2d: float) -> FeatureMatrix:
    """Concatenate two modalities so cosine equals their fused similarity.

    Rows are L2-normalized per modality and scaled by sqrt(w2d) and
    sqrt(1 - w2d); the cosine of the concatenation then equals
    w2d * cos_2d + (1 - w2d) * cos_3d exactly, which gives generators that
    need a feature space (seed sampling) the same geometry as the
    similarity-level fusion.
    """
    if not 0.0 <= w2d <= 1.0:
        raise ValueError(f"w2d must lie in [0, 1], got {w2d}")
    if F2d.num_segments != F3d.num_segments:
        raise ValueError(
            f"segment counts differ: {F2d.num_segments} vs {F3d.num_segments}"
        )

    def unit(rows):
        rows = np.asarray(rows, dtype=np.float64)
        norms = np.linalg.norm(rows, axis=1)
        return rows / np.where(norms > 0, norms, 1.0)[:, None]

    rows = np.concatenate(
        [np.sqrt(w2d) * unit(F2d.rows), np.sqrt(1.0 - w2d) * unit(F3d.rows)], axis=1
    )
    return FeatureMatrix(rows=rows, modality="other")


def threshold_saliency(A: AffinityMatrix, tau_cut: float, epsilon: float = 1e-5) -> AffinityMatrix:
    """Binarize a cosine matrix into a connected saliency graph.

    Entries >= tau_cut (inclusive) become 1, everything else becomes epsilon;
    the epsilon floor keeps the graph connected so degree matrices stay
    invertible downstream.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if A.kind != "raw_cosine":
        raise ValueError("saliency thresholding expects a raw_cosine matrix")
    values = np.where(A.values >= tau_cut, 1.0, epsilon)
    return AffinityMatrix(values=values, kind="saliency")
