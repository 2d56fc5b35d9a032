import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seg2hoi.geometry import (
    BinaryMask,
    Box,
    NoForegroundError,
    box_intersection,
    box_l1,
    crop_mask,
    expand_box,
    giou,
    mask_to_box,
    mask_union,
    rasterize_box,
    rle_decode,
    rle_encode,
)


def raster_giou_oracle(a: Box, b: Box, n: int = 1000) -> float:
    """Pixel-counting GIoU on an n x n grid, independent of the interval math."""
    xs = (np.arange(n) + 0.5) / n
    grid_x, grid_y = np.meshgrid(xs, xs)

    def inside(box):
        x0, y0, x1, y1 = box.corners()
        return (grid_x >= x0) & (grid_x <= x1) & (grid_y >= y0) & (grid_y <= y1)

    ra, rb = inside(a), inside(b)
    inter = np.sum(ra & rb)
    union = np.sum(ra | rb)
    iou = inter / union if union else 0.0
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    enc = Box.from_corners(
        min(ax0, bx0), min(ay0, by0), max(ax1, bx1), max(ay1, by1)
    )
    enclose = np.sum(inside(enc))
    if enclose == 0:
        return iou
    return iou - (enclose - union) / enclose


def _box_from_points(x0, x1, y0, y1):
    return Box.from_corners(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


# corner-sampled so the box always stays inside the unit square
boxes = st.builds(
    _box_from_points,
    st.floats(0.0, 1.0),
    st.floats(0.0, 1.0),
    st.floats(0.0, 1.0),
    st.floats(0.0, 1.0),
)


class TestGiou:
    def test_identity(self):
        b = Box(0.5, 0.5, 0.2, 0.2)
        assert giou(b, b) == pytest.approx(1.0)

    def test_corner_touching_matches_raster_oracle(self):
        a = Box(0.25, 0.25, 0.5, 0.5)
        b = Box(0.75, 0.75, 0.5, 0.5)
        assert giou(a, b) == pytest.approx(raster_giou_oracle(a, b), abs=1e-3)

    def test_disjoint_is_negative(self):
        a = Box(0.1, 0.1, 0.1, 0.1)
        b = Box(0.9, 0.9, 0.1, 0.1)
        assert giou(a, b) < 0

    def test_degenerate_never_nan(self):
        z = Box(0.3, 0.3, 0.0, 0.0)
        assert np.isfinite(giou(z, z))
        assert np.isfinite(giou(z, Box(0.6, 0.6, 0.2, 0.2)))

    @given(a=boxes, b=boxes)
    @settings(max_examples=40, deadline=None)
    def test_matches_raster_oracle(self, a, b):
        # the raster oracle approximates area integrals, so it only
        # applies to boxes of nonvanishing size
        if min(a.w, a.h, b.w, b.h) < 0.01:
            return
        assert giou(a, b) == pytest.approx(raster_giou_oracle(a, b), abs=2e-3)

    @given(a=boxes, b=boxes)
    @settings(max_examples=100, deadline=None)
    def test_symmetric_and_bounded(self, a, b):
        g = giou(a, b)
        assert g == pytest.approx(giou(b, a))
        assert g <= 1.0 + 1e-12
        # the open lower bound holds for non-degenerate boxes; zero-area
        # boxes may reach exactly -1
        if a.area > 0 and b.area > 0:
            assert g > -1.0
        else:
            assert g >= -1.0


class TestBoxL1:
    def test_identical(self):
        b = Box(0.4, 0.4, 0.2, 0.1)
        assert box_l1(b, b) == 0.0

    def test_unit_offsets(self):
        assert box_l1(Box(0, 0, 0, 0), Box(1, 1, 1, 1)) == pytest.approx(4.0)

    @given(a=boxes, b=boxes)
    @settings(max_examples=100)
    def test_componentwise_oracle(self, a, b):
        expect = sum(abs(x - y) for x, y in zip(a.as_array(), b.as_array()))
        assert box_l1(a, b) == pytest.approx(expect)


class TestExpandIntersect:
    def test_expand_zero_is_identity(self):
        b = Box(0.3, 0.3, 0.2, 0.2)
        assert expand_box(b, 0.0).corners() == pytest.approx(b.corners())

    def test_expand_clamps(self):
        b = Box.from_corners(0.0, 0.0, 0.4, 0.4)
        assert expand_box(b, 0.1).corners() == pytest.approx((0, 0, 0.5, 0.5))

    def test_intersection_interval(self):
        a = Box.from_corners(0.0, 0.0, 0.4, 0.4)
        b = Box.from_corners(0.2, 0.2, 0.6, 0.6)
        got = box_intersection(a, b)
        assert got is not None
        assert got.corners() == pytest.approx((0.2, 0.2, 0.4, 0.4))

    def test_disjoint_gives_none(self):
        a = Box.from_corners(0.0, 0.0, 0.2, 0.2)
        b = Box.from_corners(0.5, 0.5, 0.7, 0.7)
        assert box_intersection(a, b) is None

    def test_self_intersection(self):
        a = Box(0.5, 0.5, 0.3, 0.2)
        got = box_intersection(a, a)
        assert got is not None
        assert got.corners() == pytest.approx(a.corners())

    @given(a=boxes, b=boxes, gamma=st.floats(0.01, 0.3))
    @settings(max_examples=60)
    def test_expanded_touching_boxes_intersect(self, a, b, gamma):
        if box_intersection(a, b) is None:
            return
        got = box_intersection(expand_box(a, gamma), expand_box(b, gamma))
        assert got is not None
        assert got.area > 0

    @given(a=boxes, b=boxes)
    @settings(max_examples=100)
    def test_intersection_contained_in_both(self, a, b):
        got = box_intersection(a, b)
        if got is None:
            return
        gx0, gy0, gx1, gy1 = got.corners()
        for parent in (a, b):
            px0, py0, px1, py1 = parent.corners()
            eps = 1e-9
            assert px0 - eps <= gx0 and gx1 <= px1 + eps
            assert py0 - eps <= gy0 and gy1 <= py1 + eps


masks = st.integers(0, 2**30 - 1).map(
    lambda bits: BinaryMask(
        np.array([(bits >> i) & 1 for i in range(30)], dtype=np.uint8).reshape(5, 6)
    )
)


class TestMaskOps:
    def test_union_disjoint_areas(self):
        a = BinaryMask.zeros(4, 4)
        a.data[0, :3] = 1
        b = BinaryMask.zeros(4, 4)
        b.data[2, :4] = 1
        assert mask_union(a, b).area == 7

    def test_union_idempotent(self):
        a = BinaryMask(np.eye(5, dtype=np.uint8))
        assert mask_union(a, a) == a

    def test_union_dim_mismatch(self):
        with pytest.raises(ValueError):
            mask_union(BinaryMask.zeros(2, 2), BinaryMask.zeros(3, 3))

    @given(a=masks, b=masks)
    @settings(max_examples=100)
    def test_union_inclusion_exclusion(self, a, b):
        inter = int(np.sum(a.data & b.data))
        assert mask_union(a, b).area == a.area + b.area - inter

    @given(a=masks, b=masks, c=masks)
    @settings(max_examples=50)
    def test_union_commutative_associative(self, a, b, c):
        assert mask_union(a, b) == mask_union(b, a)
        assert mask_union(mask_union(a, b), c) == mask_union(a, mask_union(b, c))

    def test_mask_to_box_single_cell(self):
        m = BinaryMask.zeros(8, 8)
        m.data[3, 5] = 1
        box = mask_to_box(m)
        assert box.cx == pytest.approx((5 + 0.5) / 8)
        assert box.cy == pytest.approx((3 + 0.5) / 8)
        assert box.w == pytest.approx(1 / 8)
        assert box.h == pytest.approx(1 / 8)

    def test_mask_to_box_full(self):
        m = BinaryMask(np.ones((6, 6), dtype=np.uint8))
        assert mask_to_box(m).as_array() == pytest.approx([0.5, 0.5, 1, 1])

    def test_mask_to_box_empty_raises(self):
        with pytest.raises(NoForegroundError):
            mask_to_box(BinaryMask.zeros(4, 4))

    @given(m=masks)
    @settings(max_examples=100)
    def test_mask_to_box_scan_oracle(self, m):
        if m.area == 0:
            return
        rows = [r for r in range(m.height) if m.data[r].any()]
        cols = [c for c in range(m.width) if m.data[:, c].any()]
        expect = Box.from_corners(
            cols[0] / m.width,
            rows[0] / m.height,
            (cols[-1] + 1) / m.width,
            (rows[-1] + 1) / m.height,
        )
        assert mask_to_box(m).as_array() == pytest.approx(expect.as_array())

    @given(m=masks)
    @settings(max_examples=60)
    def test_mask_to_box_is_tight(self, m):
        if m.area == 0:
            return
        box = mask_to_box(m)
        raster = rasterize_box(box, m.height, m.width)
        assert raster.contains(m)
        # shrinking any side by one cell loses a 1-cell
        x0, y0, x1, y1 = box.corners()
        dx, dy = 1 / m.width, 1 / m.height
        for shrunk in (
            Box.from_corners(x0 + dx, y0, x1, y1),
            Box.from_corners(x0, y0 + dy, x1, y1),
            Box.from_corners(x0, y0, x1 - dx, y1),
            Box.from_corners(x0, y0, x1, y1 - dy),
        ):
            if shrunk.w < 0 or shrunk.h < 0:
                continue
            assert not rasterize_box(shrunk, m.height, m.width).contains(m)

    def test_crop_full_box_unchanged(self):
        m = BinaryMask(np.eye(6, dtype=np.uint8))
        assert crop_mask(m, Box(0.5, 0.5, 1, 1)) == m

    def test_crop_empty_box(self):
        m = BinaryMask(np.ones((4, 4), dtype=np.uint8))
        assert crop_mask(m, None).area == 0

    @given(m=masks, b=boxes)
    @settings(max_examples=100)
    def test_crop_containment_oracle(self, m, b):
        cropped = crop_mask(m, b)
        assert m.contains(cropped)
        assert rasterize_box(b, m.height, m.width).contains(cropped)
        assert cropped.area <= m.area


class TestRLE:
    def test_known_encoding(self):
        m = BinaryMask.zeros(2, 3)
        m.data[0, 0] = 1  # column-major first cell
        rle = rle_encode(m)
        assert rle == {"size": [2, 3], "counts": [0, 1, 5]}

    def test_empty_and_full(self):
        assert rle_encode(BinaryMask.zeros(3, 3))["counts"] == [9]
        assert rle_encode(BinaryMask(np.ones((3, 3), np.uint8)))["counts"] == [0, 9]

    @given(m=masks)
    @settings(max_examples=150)
    def test_roundtrip_and_canonical(self, m):
        rle = rle_encode(m)
        back = rle_decode(rle)
        assert back == m
        assert json.dumps(rle_encode(back)) == json.dumps(rle)

    def test_bad_total_rejected(self):
        with pytest.raises(ValueError):
            rle_decode({"size": [2, 2], "counts": [5]})
