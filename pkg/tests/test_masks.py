import numpy as np
import pytest

from meshmask import (
    InstanceMask,
    PseudoMaskSet,
    export_benchmark,
    load_masks,
    save_masks,
    segment_iou,
    vertex_iou,
)

from synth import build_segment_graph


@pytest.fixture
def seg():
    return build_segment_graph([3, 1, 2, 4], [(0, 1), (1, 2), (2, 3)])


def mask(ids, seg, conf=0.5, source="ncut:0"):
    return InstanceMask.from_segments(np.array(ids), seg, conf, source)


class TestInstanceMask:
    def test_vertex_extent_derived(self, seg):
        m = mask([0, 2], seg)
        assert m.segment_ids.tolist() == [0, 2]
        assert m.vertex_ids.tolist() == [0, 1, 2, 4, 5]
        assert m.num_vertices == 5

    def test_rejects_empty(self, seg):
        with pytest.raises(ValueError, match="no segments"):
            mask([], seg)

    def test_rejects_bad_confidence(self, seg):
        with pytest.raises(ValueError, match="confidence"):
            mask([0], seg, conf=0.0)
        with pytest.raises(ValueError, match="confidence"):
            mask([0], seg, conf=1.5)

    def test_rejects_out_of_range_segment(self, seg):
        with pytest.raises(ValueError, match="range"):
            mask([9], seg)

    def test_equality_by_content(self, seg):
        assert mask([0, 2], seg) == mask([2, 0], seg)
        assert mask([0], seg) != mask([1], seg)
        assert hash(mask([0, 2], seg)) == hash(mask([2, 0], seg))


class TestIoU:
    def test_segment_level(self, seg):
        a, b = mask([0, 1], seg), mask([1, 2], seg)
        assert segment_iou(a, b) == pytest.approx(1 / 3)
        assert segment_iou(a, a) == 1.0

    def test_vertex_level_weighs_sizes(self, seg):
        a, b = mask([0], seg), mask([0, 1], seg)  # 3 vs 4 vertices, 3 shared
        assert vertex_iou(a, b) == pytest.approx(3 / 4)
        assert segment_iou(a, b) == pytest.approx(1 / 2)


class TestLabels:
    def test_segment_and_vertex_labels(self, seg):
        masks = PseudoMaskSet((mask([0], seg, 1.0), mask([2, 3], seg, 0.5)))
        np.testing.assert_array_equal(masks.segment_labels(4), [0, -1, 1, 1])
        vl = masks.vertex_labels(10)
        assert vl[0] == vl[1] == vl[2] == 0
        assert vl[3] == -1
        assert (vl[4:] == 1).all()


class TestJsonRoundTrip:
    def test_round_trip(self, seg, tmp_path):
        original = PseudoMaskSet((
            mask([0, 1], seg, 1.0, "ncut:0"),
            mask([3], seg, 0.5, "merged:2"),
        ))
        path = tmp_path / "m.json"
        save_masks(original, path, params={"tau_cut": 0.65})
        back = load_masks(path, seg)
        assert back.masks == original.masks

    def test_deterministic_bytes(self, seg, tmp_path):
        masks = PseudoMaskSet((mask([0, 1], seg, 1.0),))
        save_masks(masks, tmp_path / "a.json", params={"x": 1})
        save_masks(masks, tmp_path / "b.json", params={"x": 1})
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


class TestBenchmarkExport:
    def test_layout_and_content(self, seg, tmp_path):
        masks = PseudoMaskSet((mask([0], seg, 0.75), mask([2, 3], seg, 0.25)))
        index = export_benchmark(masks, 10, tmp_path, "scene0")
        lines = index.read_text().splitlines()
        assert len(lines) == 2
        rel, conf, flag = lines[0].split()
        assert rel == "pred_masks/scene0_000.txt"
        assert float(conf) == 0.75
        assert flag == "1"
        flags = (tmp_path / rel).read_text().splitlines()
        assert flags == ["1", "1", "1"] + ["0"] * 7

    def test_empty_set(self, tmp_path, seg):
        index = export_benchmark(PseudoMaskSet(()), 4, tmp_path, "s")
        assert index.read_text() == ""
