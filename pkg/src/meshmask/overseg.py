"""Graph-based mesh oversegmentation into contiguous geometric segments.

Coarsens the mesh vertex graph with Felzenszwalb-Huttenlocher clustering on a
normal/color edge weight, then merges undersized components so every segment
(except whole small connected components) reaches a minimum vertex count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .mesh import TriMesh, vertex_adjacency
from .unionfind import UnionFind

SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class SegmentGraph:
    """Partition of mesh vertices into connected segments plus segment adjacency.

    segment_of_vertex : (V,) int64 segment id per vertex, ids dense in 0..N-1
    segment_vertices  : tuple of int64 arrays, vertices of each segment
    adjacency         : (M, 2) int64 unordered unique segment-id pairs (a < b)
    """

    segment_of_vertex: np.ndarray
    segment_vertices: tuple
    adjacency: np.ndarray

    @property
    def num_segments(self) -> int:
        return len(self.segment_vertices)

    @property
    def segment_sizes(self) -> np.ndarray:
        return np.array([len(v) for v in self.segment_vertices], dtype=np.int64)

    @classmethod
    def from_labels(cls, labels: np.ndarray, mesh_edges: np.ndarray) -> "SegmentGraph":
        """Build from per-vertex labels (relabeled densely by first appearance)."""
        labels = np.asarray(labels, dtype=np.int64)
        uniq, dense = np.unique(labels, return_inverse=True)
        # reorder ids by first appearance so segment 0 contains vertex 0
        first = np.full(len(uniq), len(labels), dtype=np.int64)
        np.minimum.at(first, dense, np.arange(len(labels)))
        rank = np.empty(len(uniq), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(uniq))
        ids = rank[dense]
        order = np.argsort(ids, kind="stable")
        bounds = np.searchsorted(ids[order], np.arange(len(uniq) + 1))
        vertices = tuple(
            np.sort(order[bounds[i] : bounds[i + 1]]) for i in range(len(uniq))
        )
        mesh_edges = np.asarray(mesh_edges, dtype=np.int64).reshape(-1, 2)
        if len(mesh_edges):
            a = ids[mesh_edges[:, 0]]
            b = ids[mesh_edges[:, 1]]
            cross = a != b
            lo = np.minimum(a[cross], b[cross])
            hi = np.maximum(a[cross], b[cross])
            adjacency = np.unique(np.stack([lo, hi], axis=1), axis=0)
        else:
            adjacency = np.empty((0, 2), dtype=np.int64)
        svw = ids.copy()
        svw.flags.writeable = False
        adjacency.flags.writeable = False
        return cls(segment_of_vertex=svw, segment_vertices=vertices, adjacency=adjacency)


def _edge_weights(mesh: TriMesh, edges: np.ndarray, color_weight: float) -> np.ndarray:
    u, v = edges[:, 0], edges[:, 1]
    w = (1.0 - color_weight) * (1.0 - np.sum(mesh.normals[u] * mesh.normals[v], axis=1))
    if color_weight > 0.0:
        w = w + color_weight * (np.linalg.norm(mesh.colors[u] - mesh.colors[v], axis=1) / SQRT3)
    return w


def oversegment(
    mesh: TriMesh,
    k: float = 0.01,
    min_size: int = 50,
    color_weight: float = 0.25,
) -> SegmentGraph:
    """Cluster mesh vertices into contiguous segments of similar normal/color.

    Edge weight between adjacent vertices u, v:

        w(u, v) = (1 - color_weight) * (1 - n_u . n_v)
                  + color_weight * ||c_u - c_v||_2 / sqrt(3)

    Edges are scanned in ascending weight (ties broken by vertex index pair);
    two components merge when the edge weight is at most
    min(Int(C_u) + k/|C_u|, Int(C_v) + k/|C_v|), where Int is the largest
    weight merged inside the component so far. A final pass folds every
    component smaller than min_size into its lowest-weight neighbor;
    connected components that are entirely smaller than min_size survive.

    Parameters
    ----------
    k : scale parameter; larger values favor larger segments.
    min_size : minimum vertex count per segment after the cleanup pass.
    color_weight : blend in [0, 1] between normal affinity and color distance.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if min_size < 1:
        raise ValueError(f"min_size must be >= 1, got {min_size}")
    if not 0.0 <= color_weight <= 1.0:
        raise ValueError(f"color_weight must lie in [0, 1], got {color_weight}")
    if mesh.normals is None:
        raise ValueError("mesh has no normals; call compute_vertex_normals first")
    edges = vertex_adjacency(mesh).edges
    if not len(edges):
        raise ValueError("mesh has no edges to segment")

    w = _edge_weights(mesh, edges, color_weight)
    order = np.lexsort((edges[:, 1], edges[:, 0], w))
    e0 = edges[order, 0]
    e1 = edges[order, 1]
    ws = w[order]

    uf = UnionFind(mesh.num_vertices)
    threshold = np.full(mesh.num_vertices, k, dtype=np.float64)
    for i in range(len(ws)):
        a = uf.find(e0[i])
        b = uf.find(e1[i])
        if a != b and ws[i] <= min(threshold[a], threshold[b]):
            r = uf.union(a, b)
            threshold[r] = ws[i] + k / uf.size[r]

    if min_size > 1:
        for i in range(len(ws)):
            a = uf.find(e0[i])
            b = uf.find(e1[i])
            if a != b and (uf.size[a] < min_size or uf.size[b] < min_size):
                uf.union(a, b)

    return SegmentGraph.from_labels(uf.roots(), edges)


def segment_count_sweep(mesh: TriMesh, k: float, min_sizes, color_weight: float = 0.25):
    """Segment counts for a list of min_size settings; returns [(min_size, count)]."""
    return [
        (m, oversegment(mesh, k=k, min_size=m, color_weight=color_weight).num_segments)
        for m in min_sizes
    ]


class MeshOversegmenter(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`oversegment`.

    fit(X) takes a TriMesh with normals and exposes ``segments_`` (the
    SegmentGraph) and ``labels_`` (per-vertex segment ids).
    """

    def __init__(self, k: float = 0.01, min_size: int = 50, color_weight: float = 0.25):
        self.k = k
        self.min_size = min_size
        self.color_weight = color_weight

    def fit(self, X: TriMesh, y=None):
        self.segments_ = oversegment(
            X, k=self.k, min_size=self.min_size, color_weight=self.color_weight
        )
        self.labels_ = self.segments_.segment_of_vertex
        return self


# ---------------------------------------------------------------------------
# Segment files: one ASCII segment id per vertex line + JSON sidecar.


def save_segments(seg: SegmentGraph, path, params: dict | None = None) -> None:
    """Write per-vertex segment ids and a ``<path>.json`` sidecar."""
    path = Path(path)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(str(int(s)) for s in seg.segment_of_vertex))
        fh.write("\n")
    sidecar = {
        "num_segments": int(seg.num_segments),
        "adjacency": [[int(a), int(b)] for a, b in seg.adjacency],
        "params": params or {},
    }
    with open(path.with_suffix(path.suffix + ".json"), "w", encoding="ascii") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_segments(path) -> SegmentGraph:
    """Read a segment file and its JSON sidecar back into a SegmentGraph."""
    path = Path(path)
    labels = np.loadtxt(path, dtype=np.int64, ndmin=1)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    with open(sidecar_path, encoding="ascii") as fh:
        sidecar = json.load(fh)
    n = int(sidecar["num_segments"])
    if labels.min() < 0 or labels.max() >= n:
        raise ValueError(f"{path}: segment ids out of range for {n} segments")
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(n + 1))
    vertices = tuple(np.sort(order[bounds[i] : bounds[i + 1]]) for i in range(n))
    if any(len(v) == 0 for v in vertices):
        raise ValueError(f"{path}: sidecar declares empty segments")
    adjacency = np.asarray(sidecar["adjacency"], dtype=np.int64).reshape(-1, 2)
    labels = labels.copy()
    labels.flags.writeable = False
    adjacency.flags.writeable = False
    return SegmentGraph(
        segment_of_vertex=labels, segment_vertices=vertices, adjacency=adjacency
    )
