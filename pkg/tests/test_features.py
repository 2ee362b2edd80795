import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from meshmask import (
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
from meshmask.features import FmatError

from synth import build_segment_graph


def chain_graph(counts):
    n = len(counts)
    return build_segment_graph(counts, [(i, i + 1) for i in range(n - 1)])


class TestFmatIO:
    def test_small_matrix(self, tmp_path):
        vf = VertexFeatures(rows=np.array([[1, 0], [0, 1], [1, 1]], dtype=np.float32))
        path = tmp_path / "f.fmat"
        save_vertex_features(vf, path)
        back = load_vertex_features(path)
        np.testing.assert_array_equal(back.rows, vf.rows)
        assert back.rows.shape == (3, 2)

    def test_round_trip_byte_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        vf = VertexFeatures(rows=rng.standard_normal((17, 5)).astype(np.float32))
        a, b = tmp_path / "a.fmat", tmp_path / "b.fmat"
        save_vertex_features(vf, a)
        save_vertex_features(load_vertex_features(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_truncated_payload(self, tmp_path):
        vf = VertexFeatures(rows=np.ones((4, 2), dtype=np.float32))
        path = tmp_path / "f.fmat"
        save_vertex_features(vf, path)
        data = path.read_bytes()
        path.write_bytes(data[: 24 + 3 * 2 * 4])  # header says 4 rows, keep 3
        with pytest.raises(FmatError, match="payload"):
            load_vertex_features(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "f.fmat"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(FmatError, match="magic"):
            load_vertex_features(path)

    def test_non_finite_rejected(self, tmp_path):
        path = tmp_path / "f.fmat"
        import struct

        payload = np.array([1.0, np.inf], dtype="<f4").tobytes()
        path.write_bytes(b"FMAT" + struct.pack("<IQQ", 1, 1, 2) + payload)
        with pytest.raises(FmatError, match="non-finite"):
            load_vertex_features(path)


class TestAggregate:
    def test_pair_mean(self):
        seg = chain_graph([2])
        vf = VertexFeatures(rows=np.array([[2.0, 0.0], [0.0, 2.0]]))
        out = aggregate_features(vf, seg)
        np.testing.assert_allclose(out.rows, [[1.0, 1.0]])

    def test_singleton_identity(self):
        seg = chain_graph([1, 1])
        vf = VertexFeatures(rows=np.array([[3.0, 4.0], [5.0, 6.0]]))
        out = aggregate_features(vf, seg)
        np.testing.assert_array_equal(out.rows, vf.rows)

    def test_matches_summation_oracle(self):
        rng = np.random.default_rng(5)
        counts = rng.integers(1, 40, size=10)
        counts[0] += 200 - counts.sum() if counts.sum() < 200 else 0
        seg = chain_graph(counts)
        n_vert = int(counts.sum())
        vf = VertexFeatures(rows=rng.standard_normal((n_vert, 7)))
        out = aggregate_features(vf, seg)
        for sid, verts in enumerate(seg.segment_vertices):
            total = np.zeros(7)
            for v in verts:
                total += vf.rows[v]
            np.testing.assert_allclose(out.rows[sid], total / len(verts), atol=1e-12)

    def test_median_option(self):
        seg = chain_graph([3])
        vf = VertexFeatures(rows=np.array([[1.0], [10.0], [2.0]]))
        assert aggregate_features(vf, seg, agg="median").rows[0, 0] == 2.0

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(11)
        counts = [3, 1, 4, 2]
        seg = chain_graph(counts)
        vf = VertexFeatures(rows=rng.standard_normal((10, 3)))
        base = aggregate_features(vf, seg).rows
        # relabel segments by a permutation: rows permute identically
        perm = np.array([2, 0, 3, 1])
        labels = perm[seg.segment_of_vertex]
        order = np.argsort(labels, kind="stable")
        seg2 = build_segment_graph(
            [counts[i] for i in np.argsort(perm)], [(0, 1), (1, 2), (2, 3)]
        )
        vf2 = VertexFeatures(rows=vf.rows[order])
        permuted = aggregate_features(vf2, seg2).rows
        np.testing.assert_allclose(permuted[perm], base)

    def test_size_mismatch(self):
        seg = chain_graph([2, 2])
        with pytest.raises(ValueError, match="match"):
            aggregate_features(VertexFeatures(rows=np.ones((3, 2))), seg)


class TestCosine:
    def test_identical_rows_all_ones(self):
        out = cosine_similarity(FeatureMatrix(rows=np.tile([1.0, 2.0], (4, 1))))
        np.testing.assert_allclose(out.values, 1.0)

    def test_orthogonal_rows(self):
        out = cosine_similarity(FeatureMatrix(rows=np.array([[1.0, 0.0], [0.0, 1.0]])))
        np.testing.assert_allclose(out.values, [[1.0, 0.0], [0.0, 1.0]], atol=1e-15)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(2)
        rows = rng.standard_normal((8, 4))
        out = cosine_similarity(FeatureMatrix(rows=rows)).values
        for i in range(8):
            for j in range(8):
                expect = rows[i] @ rows[j] / (np.linalg.norm(rows[i]) * np.linalg.norm(rows[j]))
                if i == j:
                    expect = 1.0
                assert abs(out[i, j] - expect) < 1e-12

    def test_zero_rows(self):
        out = cosine_similarity(FeatureMatrix(rows=np.array([[0.0, 0.0], [1.0, 0.0]])))
        np.testing.assert_allclose(out.values, [[1.0, 0.0], [0.0, 1.0]])


class TestFuse:
    def _pair(self, seed=3, n=6):
        rng = np.random.default_rng(seed)
        a = cosine_similarity(FeatureMatrix(rows=rng.standard_normal((n, 4))))
        b = cosine_similarity(FeatureMatrix(rows=rng.standard_normal((n, 4))))
        return a, b

    def test_endpoints_exact(self):
        a, b = self._pair()
        np.testing.assert_array_equal(fuse_similarities(a, b, 0.0).values, b.values)
        np.testing.assert_array_equal(fuse_similarities(a, b, 1.0).values, a.values)

    def test_half_is_elementwise_mean(self):
        a, b = self._pair()
        out = fuse_similarities(a, b, 0.5).values
        np.testing.assert_allclose(out, (a.values + b.values) / 2.0, atol=1e-15)

    def test_dimension_mismatch(self):
        a, _ = self._pair(n=6)
        b, _ = self._pair(n=5)
        with pytest.raises(ValueError, match="shapes"):
            fuse_similarities(a, b, 0.5)

    @settings(max_examples=25, deadline=None)
    @given(
        arrays(np.float64, (5, 3), elements=st.floats(-2, 2)),
        arrays(np.float64, (5, 3), elements=st.floats(-2, 2)),
        st.floats(0, 1),
    )
    def test_preserves_symmetry_and_range(self, ra, rb, w):
        a = cosine_similarity(FeatureMatrix(rows=ra))
        b = cosine_similarity(FeatureMatrix(rows=rb))
        out = fuse_similarities(a, b, w).values
        assert np.abs(out - out.T).max() <= 1e-12
        assert out.min() >= -1.0 - 1e-12 and out.max() <= 1.0 + 1e-12


class TestFuseFeatures:
    def test_cosine_equals_fused_similarity(self):
        rng = np.random.default_rng(9)
        f2d = FeatureMatrix(rows=rng.standard_normal((7, 3)))
        f3d = FeatureMatrix(rows=rng.standard_normal((7, 5)))
        for w in (0.0, 0.3, 0.5, 1.0):
            fused_rows = fuse_features(f2d, f3d, w)
            got = cosine_similarity(fused_rows).values
            expect = fuse_similarities(
                cosine_similarity(f2d), cosine_similarity(f3d), w
            ).values
            np.testing.assert_allclose(got, expect, atol=1e-12)


class TestSaliency:
    def test_paper_operating_points(self):
        values = np.array([[1.0, 0.70, 0.50], [0.70, 1.0, 0.55], [0.50, 0.55, 1.0]])
        A = AffinityMatrix(values=values, kind="raw_cosine")
        out = threshold_saliency(A, 0.65, 1e-5).values
        assert out[0, 1] == 1.0  # 0.70 >= 0.65
        assert out[0, 2] == 1e-5  # 0.50 < 0.65
        out55 = threshold_saliency(A, 0.55, 1e-5).values
        assert out55[1, 2] == 1.0  # boundary is inclusive

    def test_all_below_gives_uniform_epsilon(self):
        values = np.full((3, 3), 0.1)
        out = threshold_saliency(AffinityMatrix(values=values, kind="raw_cosine"), 0.65)
        np.testing.assert_allclose(out.values, 1e-5)

    def test_two_distinct_values(self):
        rng = np.random.default_rng(4)
        A = cosine_similarity(FeatureMatrix(rows=rng.standard_normal((9, 4))))
        out = threshold_saliency(A, 0.3, 1e-5)
        assert set(np.unique(out.values)) <= {1e-5, 1.0}
        assert out.kind == "saliency"
        np.testing.assert_array_equal(out.values, out.values.T)

    def test_epsilon_validation(self):
        A = cosine_similarity(FeatureMatrix(rows=np.eye(3)))
        with pytest.raises(ValueError):
            threshold_saliency(A, 0.5, 0.0)
        with pytest.raises(ValueError):
            threshold_saliency(A, 0.5, 1.0)


class TestTypes:
    def test_vertex_features_reject_non_finite(self):
        with pytest.raises(ValueError):
            VertexFeatures(rows=np.array([[1.0, np.nan]]))

    def test_affinity_requires_symmetry(self):
        with pytest.raises(ValueError, match="symmetric"):
            AffinityMatrix(values=np.array([[1.0, 0.5], [0.0, 1.0]]), kind="raw_cosine")

    def test_affinity_requires_square(self):
        with pytest.raises(ValueError, match="square"):
            AffinityMatrix(values=np.ones((2, 3)), kind="raw_cosine")
