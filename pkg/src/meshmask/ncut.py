"""Masked normalized-cut pseudo-mask extraction on segment graphs.

The solver follows the classic two-way normalized cut: the second-smallest
generalized eigenvector of (D - W) v = lambda D v, thresholded at its mean,
yields the foreground. The masked loop extracts one connected foreground per
iteration, removes its segments and repeats on the remainder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .features import AffinityMatrix, FeatureMatrix, cosine_similarity
from .masks import InstanceMask, PseudoMaskSet
from .overseg import SegmentGraph
from .unionfind import UnionFind

from sklearn.base import BaseEstimator

SEPARATIONS = ("max", "avg", "largest", "none")

EIG_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class NCutParams:
    """Knobs of the masked-cut loop.

    tau_cut    : saliency threshold on cosine similarity, in (0, 1)
    epsilon    : sub-threshold affinity floor keeping the graph connected
    max_instances : hard cap on extracted masks
    min_foreground_segments : candidates with fewer foreground segments are
        rejected and extraction stops (no salient structure remains)
    separation : foreground connectivity strategy: max | avg | largest | none
    """

    tau_cut: float = 0.65
    epsilon: float = 1e-5
    max_instances: int = 20
    min_foreground_segments: int = 8
    separation: str = "max"

    def __post_init__(self):
        if not 0.0 < self.tau_cut < 1.0:
            raise ValueError(f"tau_cut must lie in (0, 1), got {self.tau_cut}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.max_instances < 1:
            raise ValueError(f"max_instances must be >= 1, got {self.max_instances}")
        if self.min_foreground_segments < 1:
            raise ValueError(
                f"min_foreground_segments must be >= 1, got {self.min_foreground_segments}"
            )
        if self.separation not in SEPARATIONS:
            raise ValueError(
                f"separation must be one of {SEPARATIONS}, got {self.separation!r}"
            )

    def as_dict(self) -> dict:
        return {
            "tau_cut": self.tau_cut,
            "epsilon": self.epsilon,
            "max_instances": self.max_instances,
            "min_foreground_segments": self.min_foreground_segments,
            "separation": self.separation,
        }


def _affinity_values(W) -> np.ndarray:
    if isinstance(W, AffinityMatrix):
        return W.values
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("affinity must be a square matrix")
    return W


def second_smallest_generalized_eigvec(W, active=None):
    """Second-smallest eigenpair of (D - W) v = lambda D v.

    The generalized problem is reduced to a standard symmetric one through the
    D^{-1/2} similarity transform and solved densely. The eigenvector comes
    back with unit Euclidean norm and its largest-magnitude entry positive.

    Parameters
    ----------
    W : saliency AffinityMatrix or square ndarray with positive row sums.
    active : optional index array; restricts W to those rows/columns, and the
        returned vector is over the active entries only.

    Returns
    -------
    (lam, v) : eigenvalue and (n_active,) eigenvector.
    """
    values = _affinity_values(W)
    if active is not None:
        active = np.asarray(active, dtype=np.int64)
        values = values[np.ix_(active, active)]
    n = values.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 active segments, got {n}")
    d = values.sum(axis=1)
    if d.min() <= 0.0:
        raise ValueError("degree matrix must be strictly positive")
    dis = 1.0 / np.sqrt(d)
    M = np.eye(n) - (dis[:, None] * values) * dis[None, :]
    M = 0.5 * (M + M.T)
    vals, vecs = scipy.linalg.eigh(M, subset_by_index=(1, 1))
    lam = float(vals[0])
    v = dis * vecs[:, 0]
    v /= np.linalg.norm(v)
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    residual = np.linalg.norm((d * v - values @ v) - lam * d * v)
    if residual > EIG_RESIDUAL_TOL * np.linalg.norm(v):
        raise ArithmeticError(
            f"eigen solve residual {residual:.3e} exceeds {EIG_RESIDUAL_TOL:.0e}"
        )
    return lam, v


def bipartition(v: np.ndarray) -> np.ndarray:
    """Foreground mask: entries at or above the arithmetic mean of v."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot bipartition an empty eigenvector")
    return v >= v.mean()


def invert_if_majority(m: np.ndarray, v: np.ndarray, n_active: int | None = None):
    """Flip the cut if the foreground holds a strict majority.

    Returns (m, v) unchanged when popcount(m) <= n/2, else (1 - m, -v); the
    result always satisfies popcount(m) <= ceil(n/2).
    """
    m = np.asarray(m, dtype=bool)
    v = np.asarray(v, dtype=np.float64)
    n = len(m) if n_active is None else n_active
    if len(m) != n or len(v) != n:
        raise ValueError("mask, eigenvector and n_active disagree in length")
    if int(m.sum()) * 2 > n:
        return ~m, -v
    return m.copy(), v.copy()


def _foreground_components(fg: np.ndarray, adjacency: np.ndarray):
    """Connected components of the foreground under the segment adjacency.

    Returns a list of index arrays (into the full mask space), ordered by
    smallest member."""
    pos = {int(s): i for i, s in enumerate(fg)}
    uf = UnionFind(len(fg))
    for a, b in np.asarray(adjacency, dtype=np.int64).reshape(-1, 2):
        ia = pos.get(int(a))
        ib = pos.get(int(b))
        if ia is not None and ib is not None:
            uf.union(ia, ib)
    roots = uf.roots()
    comps = {}
    for i, r in enumerate(roots):
        comps.setdefault(int(r), []).append(i)
    ordered = sorted(comps.values(), key=lambda ix: ix[0])
    return [fg[np.asarray(ix, dtype=np.int64)] for ix in ordered]


def separate_components(
    m: np.ndarray,
    v: np.ndarray,
    adjacency: np.ndarray,
    strategy: str = "max",
    segment_sizes: np.ndarray | None = None,
) -> np.ndarray:
    """Restrict a foreground mask to one connected component.

    strategy:
      max     : component containing the foreground's largest eigenvector entry
      avg     : component with the highest mean eigenvector activation
      largest : component covering the most vertices (needs segment_sizes)
      none    : mask returned unchanged

    m, v and segment_sizes share one index space; adjacency holds index pairs
    in that same space.
    """
    if strategy not in SEPARATIONS:
        raise ValueError(f"separation must be one of {SEPARATIONS}, got {strategy!r}")
    m = np.asarray(m, dtype=bool)
    if not m.any():
        raise ValueError("foreground is empty")
    if strategy == "none":
        return m.copy()
    v = np.asarray(v, dtype=np.float64)
    fg = np.flatnonzero(m)
    comps = _foreground_components(fg, adjacency)
    if len(comps) == 1:
        return m.copy()
    if strategy == "max":
        winner_seg = fg[np.argmax(v[fg])]
        chosen = next(c for c in comps if winner_seg in c)
    elif strategy == "avg":
        means = np.array([v[c].mean() for c in comps])
        chosen = comps[int(np.argmax(means))]
    else:  # largest
        if segment_sizes is None:
            raise ValueError("strategy 'largest' needs segment_sizes")
        sizes = np.asarray(segment_sizes, dtype=np.int64)
        totals = np.array([sizes[c].sum() for c in comps])
        chosen = comps[int(np.argmax(totals))]
    out = np.zeros_like(m)
    out[chosen] = True
    return out


def ncut_cost(mask, W) -> float:
    """Two-sided normalized cut cost of a bipartition.

    cost = cut(A, B) / assoc(A, V) + cut(A, B) / assoc(B, V) where cut sums
    the affinities crossing the partition and assoc sums each side's total
    affinity to the whole graph.
    """
    values = _affinity_values(W)
    m = np.asarray(mask, dtype=bool)
    if len(m) != values.shape[0]:
        raise ValueError("mask length does not match affinity size")
    if not m.any() or m.all():
        raise ValueError("mask must be a proper non-empty subset")
    cut = float(values[np.ix_(m, ~m)].sum())
    assoc_a = float(values[m].sum())
    assoc_b = float(values[~m].sum())
    return cut / assoc_a + cut / assoc_b


def _restrict_adjacency(adjacency: np.ndarray, active: np.ndarray, n_total: int) -> np.ndarray:
    pos = np.full(n_total, -1, dtype=np.int64)
    pos[active] = np.arange(len(active))
    if not len(adjacency):
        return np.empty((0, 2), dtype=np.int64)
    la = pos[adjacency[:, 0]]
    lb = pos[adjacency[:, 1]]
    keep = (la >= 0) & (lb >= 0)
    return np.stack([la[keep], lb[keep]], axis=1)


def masked_ncut(X, seg: SegmentGraph, params: NCutParams | None = None) -> PseudoMaskSet:
    """Extract pseudo masks by repeated normalized cuts with masking.

    Each iteration restricts the similarity matrix to the segments never
    accepted before, thresholds it into a saliency graph, cuts it, keeps one
    connected foreground component and accepts it as a mask with confidence
    1 / (1 + iteration). Extraction stops at max_instances, when fewer than
    two segments remain, or when a candidate's foreground falls below
    min_foreground_segments.

    Parameters
    ----------
    X : FeatureMatrix, (N, D) ndarray of per-segment features, or a
        raw_cosine AffinityMatrix (e.g. a fused multi-modality similarity).
    seg : the segment graph the features live on.
    """
    params = params or NCutParams()
    if isinstance(X, AffinityMatrix):
        if X.kind != "raw_cosine":
            raise ValueError("masked_ncut needs a raw_cosine affinity, not saliency")
        A = X.values
    else:
        A = cosine_similarity(X).values
    n = A.shape[0]
    if n != seg.num_segments:
        raise ValueError(
            f"affinity has {n} rows but the segment graph has {seg.num_segments} segments"
        )
    if n < 2:
        raise ValueError(f"need at least 2 segments, got {n}")

    sizes = seg.segment_sizes
    active = np.arange(n, dtype=np.int64)
    accepted: list[InstanceMask] = []
    while len(accepted) < params.max_instances and len(active) >= 2:
        W = np.where(A[np.ix_(active, active)] >= params.tau_cut, 1.0, params.epsilon)
        if not (W < 1.0).any():
            # Saturated graph: every remaining pair is already similar, the cut
            # direction is degenerate (constant eigenvector), so the
            # all-foreground bipartition inverts to empty and is rejected.
            break
        _, v = second_smallest_generalized_eigvec(W)
        m = bipartition(v)
        m, v = invert_if_majority(m, v)
        if not m.any():
            break
        local_adj = _restrict_adjacency(seg.adjacency, active, n)
        m = separate_components(m, v, local_adj, params.separation, segment_sizes=sizes[active])
        if int(m.sum()) < params.min_foreground_segments:
            break
        confidence = 1.0 / (1.0 + len(accepted))
        accepted.append(
            InstanceMask.from_segments(active[m], seg, confidence, f"ncut:{len(accepted)}")
        )
        active = active[~m]
    return PseudoMaskSet(tuple(accepted))


class MaskedNCut(BaseEstimator):
    """Estimator wrapper around :func:`masked_ncut`.

    fit(X, segments) stores the extracted PseudoMaskSet under ``masks_`` and
    per-segment instance labels (-1 for background) under ``labels_``.
    """

    def __init__(
        self,
        tau_cut: float = 0.65,
        epsilon: float = 1e-5,
        max_instances: int = 20,
        min_foreground_segments: int = 8,
        separation: str = "max",
    ):
        self.tau_cut = tau_cut
        self.epsilon = epsilon
        self.max_instances = max_instances
        self.min_foreground_segments = min_foreground_segments
        self.separation = separation

    def _params(self) -> NCutParams:
        return NCutParams(
            tau_cut=self.tau_cut,
            epsilon=self.epsilon,
            max_instances=self.max_instances,
            min_foreground_segments=self.min_foreground_segments,
            separation=self.separation,
        )

    def fit(self, X, segments: SegmentGraph):
        self.masks_ = masked_ncut(X, segments, self._params())
        self.labels_ = self.masks_.segment_labels(segments.num_segments)
        return self

    def fit_predict(self, X, segments: SegmentGraph) -> np.ndarray:
        return self.fit(X, segments).labels_
