import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fisheyekit.geometry import (
    BoxCenter,
    BoxCorner,
    ciou_gradient,
    ciou_loss,
    diou,
    giou,
    iou,
)
from oracles import central_difference, grid_diou, grid_giou, grid_iou


def box(x1, y1, x2, y2):
    return BoxCorner(x1=x1, y1=y1, x2=x2, y2=y2)


def random_corner(rng, span=32.0):
    x1, y1 = rng.uniform(0, span, 2)
    w, h = rng.uniform(0.5, span / 2, 2)
    return box(x1, y1, x1 + w, y1 + h)


def aspect_penalty(b: BoxCenter, gt: BoxCenter) -> float:
    return (4.0 / math.pi**2) * (math.atan(gt.w / gt.h) - math.atan(b.w / b.h)) ** 2


def frozen_alpha_total(pred: BoxCenter, gt: BoxCenter):
    """Loss total with the aspect weight pinned at its base-point value,
    matching the gradient contract (weight held constant under
    differentiation)."""
    gtc = gt.to_corner()
    iou0 = iou(pred.to_corner(), gtc)
    v0 = aspect_penalty(pred, gt)
    if iou0 < 0.5:
        alpha0 = 0.0
    else:
        denom = (1.0 - iou0) + v0
        alpha0 = v0 / denom if denom > 0 else 0.0

    def total(vec):
        b = BoxCenter(*vec)
        c = b.to_corner()
        overlap = iou(c, gtc)
        dist = overlap - diou(c, gtc)
        return (1.0 - overlap) + dist + alpha0 * aspect_penalty(b, gt)

    return total


class TestBoxTypes:
    def test_negative_extent_rejected(self):
        with pytest.raises(ValueError):
            box(2, 0, 1, 1)
        with pytest.raises(ValueError):
            BoxCenter(cx=0, cy=0, w=-1, h=1)

    def test_zero_area_allowed(self):
        assert box(1, 1, 1, 1).area == 0.0

    def test_center_corner_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            b = BoxCenter(*rng.uniform(0.1, 50, 4))
            rt = b.to_corner().to_center()
            for got, want in zip((rt.cx, rt.cy, rt.w, rt.h), (b.cx, b.cy, b.w, b.h)):
                assert abs(got - want) < 1e-9


class TestIou:
    def test_identical(self):
        assert iou(box(0, 0, 2, 2), box(0, 0, 2, 2)) == 1.0

    def test_disjoint(self):
        assert iou(box(0, 0, 1, 1), box(5, 5, 6, 6)) == 0.0

    def test_partial_overlap(self):
        # frozen from the unit-grid counting oracle: inter 1, union 7
        a, b = box(0, 0, 2, 2), box(1, 1, 3, 3)
        assert grid_iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-12)
        assert iou(a, b) == pytest.approx(1 / 7, abs=1e-12)

    def test_two_zero_area_boxes(self):
        assert iou(box(1, 1, 1, 1), box(1, 1, 1, 1)) == 0.0

    def test_matches_grid_oracle_on_integer_boxes(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            ax1, ay1, bx1, by1 = rng.integers(0, 28, 4)
            a = (int(ax1), int(ay1), int(ax1 + rng.integers(1, 5)), int(ay1 + rng.integers(1, 5)))
            b = (int(bx1), int(by1), int(bx1 + rng.integers(1, 5)), int(by1 + rng.integers(1, 5)))
            assert iou(box(*a), box(*b)) == pytest.approx(grid_iou(a, b), abs=1e-6)


class TestGiou:
    def test_identical(self):
        assert giou(box(0, 0, 2, 2), box(0, 0, 2, 2)) == 1.0

    def test_disjoint_side_by_side(self):
        # IoU 0, enclose 3, union 2
        assert giou(box(0, 0, 1, 1), box(2, 0, 3, 1)) == pytest.approx(-1 / 3, abs=1e-12)
        assert grid_giou((0, 0, 1, 1), (2, 0, 3, 1)) == pytest.approx(-1 / 3, abs=1e-12)

    def test_touching(self):
        assert giou(box(0, 0, 1, 1), box(1, 0, 2, 1)) == 0.0

    def test_matches_grid_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(60):
            vals = rng.integers(0, 28, 4)
            a = (int(vals[0]), int(vals[1]), int(vals[0] + rng.integers(1, 5)), int(vals[1] + rng.integers(1, 5)))
            b = (int(vals[2]), int(vals[3]), int(vals[2] + rng.integers(1, 5)), int(vals[3] + rng.integers(1, 5)))
            assert giou(box(*a), box(*b)) == pytest.approx(grid_giou(a, b), abs=1e-6)


class TestDiou:
    def test_identical(self):
        assert diou(box(0, 0, 2, 2), box(0, 0, 2, 2)) == 1.0

    def test_concentric_equals_iou(self):
        a, b = box(0, 0, 4, 4), box(1, 1, 3, 3)
        assert diou(a, b) == iou(a, b)

    def test_partial_overlap(self):
        # rho^2 = 2, c^2 = 18
        assert diou(box(0, 0, 2, 2), box(1, 1, 3, 3)) == pytest.approx(
            1 / 7 - 2 / 18, abs=1e-12
        )
        assert grid_diou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(
            1 / 7 - 2 / 18, abs=1e-12
        )


class TestCiouLoss:
    def test_identical_is_zero(self):
        terms = ciou_loss(box(0, 0, 2, 2), box(0, 0, 2, 2))
        assert terms.total == 0.0
        assert terms.s_overlap == terms.d_center == terms.v_aspect == 0.0

    def test_concentric_same_aspect_high_iou(self):
        pred, gt = box(1, 1, 5, 5), box(0.5, 0.5, 5.5, 5.5)
        assert iou(pred, gt) >= 0.5
        terms = ciou_loss(pred, gt)
        assert terms.d_center == 0.0
        assert terms.v_aspect == 0.0
        assert terms.total == pytest.approx(1 - iou(pred, gt), abs=1e-15)

    def test_low_iou_drops_aspect_term(self):
        terms = ciou_loss(box(0, 0, 2, 2), box(1, 1, 3, 3))
        assert terms.v_aspect == 0.0
        assert terms.total == pytest.approx((1 - 1 / 7) + 2 / 18, abs=1e-12)

    def test_degenerate_pred_rejected(self):
        with pytest.raises(ValueError):
            ciou_loss(box(0, 0, 0, 2), box(0, 0, 2, 2))
        with pytest.raises(ValueError):
            ciou_loss(box(0, 0, 2, 2), box(1, 1, 1, 1))

    def test_diou_regime_identity(self):
        # total == 1 - diou whenever IoU < 0.5
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 200:
            a, b = random_corner(rng), random_corner(rng)
            if iou(a, b) >= 0.5:
                continue
            assert abs(ciou_loss(a, b).total - (1.0 - diou(a, b))) < 1e-12
            checked += 1

    def test_total_range_and_term_bounds(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            a, b = random_corner(rng), random_corner(rng)
            terms = ciou_loss(a, b)
            assert 0.0 <= terms.s_overlap <= 1.0
            assert 0.0 <= terms.d_center <= 1.0
            assert terms.v_aspect >= 0.0
            assert 0.0 <= terms.total < 3.0


class TestCiouGradient:
    def test_translation_terms_vanish_at_optimum(self):
        g = ciou_gradient(BoxCenter(2, 2, 4, 4), BoxCenter(2, 2, 4, 4))
        assert g[0] == 0.0 and g[1] == 0.0

    def test_concentric_same_aspect(self):
        g = ciou_gradient(BoxCenter(3, 3, 2, 2), BoxCenter(3, 3, 4, 4))
        assert g[0] == 0.0 and g[1] == 0.0

    def test_degenerate_pred_rejected(self):
        with pytest.raises(ValueError):
            ciou_gradient(BoxCenter(0, 0, 0, 1), BoxCenter(0, 0, 1, 1))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        checked = 0
        while checked < 100:
            pred = BoxCenter(*rng.uniform(1, 10, 2), *rng.uniform(0.8, 6, 2))
            gt = BoxCenter(*rng.uniform(1, 10, 2), *rng.uniform(0.8, 6, 2))
            overlap = iou(pred.to_corner(), gt.to_corner())
            if abs(overlap - 0.5) <= 1e-3:
                continue
            analytic = ciou_gradient(pred, gt)
            fd = central_difference(
                frozen_alpha_total(pred, gt),
                [pred.cx, pred.cy, pred.w, pred.h],
                1e-5,
            )
            scale = max(np.max(np.abs(analytic)), np.max(np.abs(fd)), 1e-8)
            assert np.max(np.abs(analytic - fd)) / scale < 1e-4
            checked += 1


coord = st.floats(min_value=0.0, max_value=100.0, allow_nan=False, allow_infinity=False)
side = st.floats(min_value=0.01, max_value=50.0, allow_nan=False, allow_infinity=False)


@st.composite
def corner_boxes(draw):
    x1, y1 = draw(coord), draw(coord)
    return box(x1, y1, x1 + draw(side), y1 + draw(side))


class TestProperties:
    @given(corner_boxes(), corner_boxes())
    @settings(max_examples=200, deadline=None)
    def test_iou_symmetric(self, a, b):
        assert iou(a, b) == iou(b, a)

    @given(corner_boxes(), corner_boxes())
    @settings(max_examples=200, deadline=None)
    def test_giou_below_iou(self, a, b):
        overlap = iou(a, b)
        g = giou(a, b)
        assert g <= overlap + 1e-12
        assert overlap <= min(1.0, g + 1.0) + 1e-12

    @given(
        corner_boxes(),
        corner_boxes(),
        st.floats(min_value=0.1, max_value=10.0, allow_nan=False),
        st.floats(min_value=-20.0, max_value=20.0, allow_nan=False),
    )
    @settings(max_examples=200, deadline=None)
    def test_iou_scale_translation_invariant(self, a, b, scale, shift):
        def transform(c):
            return box(
                c.x1 * scale + shift,
                c.y1 * scale + shift,
                c.x2 * scale + shift,
                c.y2 * scale + shift,
            )

        assert iou(transform(a), transform(b)) == pytest.approx(iou(a, b), abs=1e-9)
