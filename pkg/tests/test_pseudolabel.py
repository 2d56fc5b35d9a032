import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seg2hoi.geometry import (
    BinaryMask,
    Box,
    box_intersection,
    box_l1,
    expand_box,
    giou,
    mask_to_box,
    rasterize_box,
)
from seg2hoi.pseudolabel import (
    PseudoLabel,
    UnmatchableError,
    build_pseudo_label,
    match_instance,
    pseudo_labels_from_json,
    pseudo_labels_to_json,
)


def logits_from_masks(*masks):
    """Stack binary grids as +/-4 logits."""
    return np.stack([4.0 * (2.0 * m.astype(np.float64) - 1.0) for m in masks])


def blob(h, w, r0, r1, c0, c1):
    m = np.zeros((h, w), dtype=np.uint8)
    m[r0:r1, c0:c1] = 1
    return m


class TestMatchInstance:
    def test_exact_candidate_wins(self):
        gt = Box(0.5, 0.5, 0.2, 0.2)
        others = [Box(0.2, 0.2, 0.1, 0.1), gt, Box(0.8, 0.8, 0.1, 0.3)]
        assert match_instance(gt, others) == 1

    def test_identical_beats_disjoint(self):
        gt = Box(0.3, 0.3, 0.2, 0.2)
        assert match_instance(gt, [Box(0.8, 0.8, 0.1, 0.1), gt]) == 1

    def test_tie_takes_lowest_index(self):
        gt = Box(0.5, 0.5, 0.2, 0.2)
        assert match_instance(gt, [gt, gt, gt]) == 0

    def test_no_candidates(self):
        with pytest.raises(UnmatchableError):
            match_instance(Box(0.5, 0.5, 0.2, 0.2), [])

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=100, deadline=None)
    def test_exhaustive_scan_oracle(self, seed):
        rng = np.random.default_rng(seed)
        gt = Box(*rng.uniform([0.2, 0.2, 0.05, 0.05], [0.8, 0.8, 0.3, 0.3]))
        cands = [
            Box(*rng.uniform([0.2, 0.2, 0.05, 0.05], [0.8, 0.8, 0.3, 0.3]))
            for _ in range(10)
        ]
        costs = [5.0 * box_l1(gt, c) + 2.0 * (1.0 - giou(gt, c)) for c in cands]
        assert match_instance(gt, cands) == int(np.argmin(costs))


class TestBuildPseudoLabel:
    def test_identical_masks(self):
        m = blob(8, 8, 2, 6, 2, 6)
        lab = build_pseudo_label(0, 1, logits_from_masks(m, m), gamma=0.1)
        assert lab.union_mask == BinaryMask(m)
        assert lab.intersection_mask is not None
        assert lab.intersection_mask == BinaryMask(m)
        want_box = box_intersection(
            expand_box(mask_to_box(BinaryMask(m)), 0.1),
            expand_box(mask_to_box(BinaryMask(m)), 0.1),
        )
        assert lab.intersection_box.as_array() == pytest.approx(want_box.as_array())

    def test_opposite_corners_small_gamma(self):
        a = blob(16, 16, 0, 3, 0, 3)
        b = blob(16, 16, 13, 16, 13, 16)
        lab = build_pseudo_label(0, 1, logits_from_masks(a, b), gamma=0.01)
        assert lab.intersection_mask is None
        assert lab.intersection_box is None
        assert lab.union_mask.area == 18

    def test_l_shaped_overlap_cellwise_oracle(self):
        a = np.zeros((12, 12), dtype=np.uint8)
        a[2:10, 2:5] = 1
        a[7:10, 2:10] = 1  # L shape
        b = blob(12, 12, 5, 12, 4, 8)
        lab = build_pseudo_label(0, 1, logits_from_masks(a, b), gamma=0.05)
        union = (a | b).astype(np.uint8)
        assert np.array_equal(lab.union_mask.data, union)
        assert lab.intersection_box is not None
        keep = rasterize_box(lab.intersection_box, 12, 12).data
        assert np.array_equal(lab.intersection_mask.data, union & keep)

    def test_empty_matched_mask_unmatchable(self):
        a = blob(8, 8, 1, 4, 1, 4)
        empty = np.zeros((8, 8), dtype=np.uint8)
        with pytest.raises(UnmatchableError):
            build_pseudo_label(0, 1, logits_from_masks(a, empty))

    def test_presence_invariant_guard(self):
        m = BinaryMask(blob(4, 4, 0, 2, 0, 2))
        with pytest.raises(AssertionError):
            PseudoLabel(m, None, Box(0.5, 0.5, 0.1, 0.1), 0, 1)


def random_mask_pair(rng, h=16, w=16):
    def rand_blob():
        r0, c0 = rng.integers(0, h - 2), rng.integers(0, w - 2)
        r1 = rng.integers(r0 + 1, min(h, r0 + 9)) + 1
        c1 = rng.integers(c0 + 1, min(w, c0 + 9)) + 1
        return blob(h, w, r0, r1, c0, c1)

    return rand_blob(), rand_blob()


class TestProperties:
    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=120, deadline=None)
    def test_union_contains_parts_and_gamma_monotone(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_mask_pair(rng)
        logits = logits_from_masks(a, b)
        lab1 = build_pseudo_label(0, 1, logits, gamma=0.05)
        lab2 = build_pseudo_label(0, 1, logits, gamma=0.15)
        assert lab1.union_mask.contains(BinaryMask(a))
        assert lab1.union_mask.contains(BinaryMask(b))
        assert lab1.union_mask.area <= int(a.sum()) + int(b.sum())
        if lab1.intersection_mask is not None:
            assert lab1.union_mask.contains(lab1.intersection_mask)
            raster = rasterize_box(lab1.intersection_box, 16, 16)
            assert raster.contains(lab1.intersection_mask)
        # widening gamma never loses intersection cells
        small = lab1.intersection_mask.data if lab1.intersection_mask else np.zeros((16, 16))
        big = lab2.intersection_mask.data if lab2.intersection_mask else np.zeros((16, 16))
        assert np.all(big >= small)


class TestSerialization:
    def test_roundtrip(self):
        a = blob(8, 8, 1, 5, 1, 5)
        b = blob(8, 8, 3, 7, 3, 7)
        labels = [build_pseudo_label(0, 1, logits_from_masks(a, b)), None]
        text = pseudo_labels_to_json(labels, 0.1)
        back, gamma = pseudo_labels_from_json(text)
        assert gamma == 0.1
        assert back[1] is None
        assert back[0].union_mask == labels[0].union_mask
        assert back[0].intersection_mask == labels[0].intersection_mask
        assert back[0].sigma_h == 0 and back[0].sigma_o == 1
        assert back[0].intersection_box.as_array() == pytest.approx(
            labels[0].intersection_box.as_array()
        )
