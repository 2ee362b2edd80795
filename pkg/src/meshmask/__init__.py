"""Class-agnostic 3D instance pseudo-masks on scanned indoor meshes.

The pipeline coarsens a triangle mesh into geometric segments, aggregates
externally supplied per-vertex features on them, and extracts instance pseudo
masks either with a masked normalized-cut loop or a seed-based proposal
generator; mask sets can be densified with confident external predictions and
scored against vertex-level ground truth with class-agnostic average
precision.
"""

from .densify import MergePolicy, merge_predictions
from .features import (
    AffinityMatrix,
    FeatureMatrix,
    VertexFeatures,
    aggregate_features,
    cosine_similarity,
    fuse_features,
    fuse_similarities,
    load_vertex_features,
    save_vertex_features,
    threshold_saliency,
)
from .freemask import (
    FreeMaskGenerator,
    FreeMaskParams,
    farthest_point_sampling,
    freemask_generate,
    maskness_score,
    nms,
    salient_regions,
)
from .masks import (
    InstanceMask,
    PseudoMaskSet,
    export_benchmark,
    load_masks,
    save_masks,
    segment_iou,
    vertex_iou,
)
from .mesh import (
    EdgeList,
    TriMesh,
    compute_vertex_normals,
    load_ply,
    save_ply,
    vertex_adjacency,
)
from .metrics import (
    APReport,
    GroundTruthSet,
    evaluate_ap,
    evaluate_scenes,
    load_ground_truth,
    mask_iou,
    save_ground_truth,
)
from .ncut import (
    MaskedNCut,
    NCutParams,
    bipartition,
    invert_if_majority,
    masked_ncut,
    ncut_cost,
    second_smallest_generalized_eigvec,
    separate_components,
)
from .overseg import (
    MeshOversegmenter,
    SegmentGraph,
    load_segments,
    oversegment,
    save_segments,
    segment_count_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "AffinityMatrix",
    "APReport",
    "EdgeList",
    "FeatureMatrix",
    "FreeMaskGenerator",
    "FreeMaskParams",
    "GroundTruthSet",
    "InstanceMask",
    "MaskedNCut",
    "MergePolicy",
    "MeshOversegmenter",
    "NCutParams",
    "PseudoMaskSet",
    "SegmentGraph",
    "TriMesh",
    "VertexFeatures",
    "aggregate_features",
    "bipartition",
    "compute_vertex_normals",
    "cosine_similarity",
    "evaluate_ap",
    "evaluate_scenes",
    "export_benchmark",
    "farthest_point_sampling",
    "freemask_generate",
    "fuse_features",
    "fuse_similarities",
    "invert_if_majority",
    "load_ground_truth",
    "load_masks",
    "load_ply",
    "load_segments",
    "load_vertex_features",
    "mask_iou",
    "maskness_score",
    "masked_ncut",
    "merge_predictions",
    "ncut_cost",
    "nms",
    "oversegment",
    "salient_regions",
    "save_ground_truth",
    "save_masks",
    "save_ply",
    "save_segments",
    "save_vertex_features",
    "second_smallest_generalized_eigvec",
    "segment_count_sweep",
    "segment_iou",
    "separate_components",
    "threshold_saliency",
    "vertex_adjacency",
    "vertex_iou",
]
