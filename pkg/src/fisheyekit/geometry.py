"""Axis-aligned box arithmetic and the IoU/GIoU/DIoU/CIoU loss family.

All functions are pure; boxes are immutable dataclasses. The CIoU loss is
decomposed into an overlap term (1 - IoU), a normalized center-distance term
and a weighted aspect-ratio term whose weight switches off below IoU 0.5, so
the loss degenerates to the plain distance form in the low-overlap regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BoxCorner",
    "BoxCenter",
    "CiouTerms",
    "iou",
    "giou",
    "diou",
    "ciou_loss",
    "ciou_gradient",
]


@dataclass(frozen=True)
class BoxCorner:
    """Box as (x1, y1) top-left and (x2, y2) bottom-right corners."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(
                f"negative extent: ({self.x1},{self.y1},{self.x2},{self.y2})"
            )

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def to_center(self) -> "BoxCenter":
        return BoxCenter(
            cx=(self.x1 + self.x2) / 2.0,
            cy=(self.y1 + self.y2) / 2.0,
            w=self.x2 - self.x1,
            h=self.y2 - self.y1,
        )


@dataclass(frozen=True)
class BoxCenter:
    """Box as center (cx, cy) plus width and height."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ValueError(f"negative size: w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_corner(self) -> BoxCorner:
        return BoxCorner(
            x1=self.cx - self.w / 2.0,
            y1=self.cy - self.h / 2.0,
            x2=self.cx + self.w / 2.0,
            y2=self.cy + self.h / 2.0,
        )


@dataclass(frozen=True)
class CiouTerms:
    """The three additive components of the complete box loss."""

    s_overlap: float  # 1 - IoU
    d_center: float  # squared center distance over squared enclosing diagonal
    v_aspect: float  # weighted aspect-ratio mismatch

    @property
    def total(self) -> float:
        return self.s_overlap + self.d_center + self.v_aspect


def _intersection_area(a: BoxCorner, b: BoxCorner) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def iou(a: BoxCorner, b: BoxCorner) -> float:
    """Intersection over union; 0 when the union has zero area."""
    inter = _intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou(a: BoxCorner, b: BoxCorner) -> float:
    """IoU minus the enclosing-box waste fraction; in [-1, 1]."""
    inter = _intersection_area(a, b)
    union = a.area + b.area - inter
    enclose = (max(a.x2, b.x2) - min(a.x1, b.x1)) * (max(a.y2, b.y2) - min(a.y1, b.y1))
    base = inter / union if union > 0.0 else 0.0
    if enclose <= 0.0:
        return base
    return base - (enclose - union) / enclose


def _distance_term(a: BoxCorner, b: BoxCorner) -> float:
    # squared center distance normalized by the squared enclosing diagonal
    acx, acy = (a.x1 + a.x2) / 2.0, (a.y1 + a.y2) / 2.0
    bcx, bcy = (b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0
    rho2 = (acx - bcx) ** 2 + (acy - bcy) ** 2
    cw = max(a.x2, b.x2) - min(a.x1, b.x1)
    ch = max(a.y2, b.y2) - min(a.y1, b.y1)
    c2 = cw * cw + ch * ch
    if c2 <= 0.0:
        return 0.0
    return rho2 / c2


def diou(a: BoxCorner, b: BoxCorner) -> float:
    """IoU minus the normalized squared center distance; in [-1, 1]."""
    return iou(a, b) - _distance_term(a, b)


def ciou_loss(pred: BoxCorner, gt: BoxCorner) -> CiouTerms:
    """Complete box loss decomposed into overlap, distance and aspect terms.

    The aspect weight is 0 whenever IoU < 0.5, so in that regime the total
    equals 1 minus the distance-penalized IoU exactly.
    """
    if pred.x2 - pred.x1 <= 0.0 or pred.y2 - pred.y1 <= 0.0:
        raise ValueError("ciou_loss: predicted box must have positive width and height")
    if gt.area <= 0.0:
        raise ValueError("ciou_loss: ground-truth box must have positive area")
    overlap = iou(pred, gt)
    d_center = _distance_term(pred, gt)
    w, h = pred.x2 - pred.x1, pred.y2 - pred.y1
    gw, gh = gt.x2 - gt.x1, gt.y2 - gt.y1
    v = (4.0 / math.pi**2) * (math.atan(gw / gh) - math.atan(w / h)) ** 2
    if overlap < 0.5:
        v_aspect = 0.0
    else:
        denom = (1.0 - overlap) + v
        v_aspect = (v / denom) * v if denom > 0.0 else 0.0
    return CiouTerms(s_overlap=1.0 - overlap, d_center=d_center, v_aspect=v_aspect)


def ciou_gradient(pred: BoxCenter, gt: BoxCenter) -> np.ndarray:
    """Analytic gradient of the complete loss total w.r.t. (cx, cy, w, h).

    The aspect weight is held constant during differentiation. Indicator
    conventions at min/max ties are one-sided; callers should not evaluate
    exactly on a tie or on the IoU = 0.5 switching boundary.
    """
    if pred.w <= 0.0 or pred.h <= 0.0:
        raise ValueError("ciou_gradient: predicted box must have positive size")
    if gt.w <= 0.0 or gt.h <= 0.0:
        raise ValueError("ciou_gradient: ground-truth box must have positive size")

    cx, cy, w, h = pred.cx, pred.cy, pred.w, pred.h
    gx, gy, gw, gh = gt.cx, gt.cy, gt.w, gt.h
    px1, px2 = cx - w / 2.0, cx + w / 2.0
    py1, py2 = cy - h / 2.0, cy + h / 2.0
    qx1, qx2 = gx - gw / 2.0, gx + gw / 2.0
    qy1, qy2 = gy - gh / 2.0, gy + gh / 2.0

    # --- IoU term -----------------------------------------------------
    iw_raw = min(px2, qx2) - max(px1, qx1)
    ih_raw = min(py2, qy2) - max(py1, qy1)
    iw, ih = max(0.0, iw_raw), max(0.0, ih_raw)
    inter = iw * ih
    union = w * h + gw * gh - inter
    overlap = inter / union

    d_inter = np.zeros(4)
    if iw_raw > 0.0 and ih_raw > 0.0:
        right = 1.0 if px2 <= qx2 else 0.0  # pred edge active in min(px2, qx2)
        left = 1.0 if px1 >= qx1 else 0.0  # pred edge active in max(px1, qx1)
        top = 1.0 if py1 >= qy1 else 0.0
        bottom = 1.0 if py2 <= qy2 else 0.0
        d_inter[0] = ih * (right - left)
        d_inter[1] = iw * (bottom - top)
        d_inter[2] = ih * 0.5 * (right + left)
        d_inter[3] = iw * 0.5 * (bottom + top)

    d_area = np.array([0.0, 0.0, h, w])
    d_union = d_area - d_inter
    d_iou = (d_inter * union - inter * d_union) / union**2

    # --- center-distance term ------------------------------------------
    cw = max(px2, qx2) - min(px1, qx1)
    ch = max(py2, qy2) - min(py1, qy1)
    c2 = cw * cw + ch * ch
    rho2 = (cx - gx) ** 2 + (cy - gy) ** 2

    e_right = 1.0 if px2 >= qx2 else 0.0  # pred edge active in max(px2, qx2)
    e_left = 1.0 if px1 <= qx1 else 0.0
    e_top = 1.0 if py1 <= qy1 else 0.0
    e_bottom = 1.0 if py2 >= qy2 else 0.0
    d_cw = np.array([e_right - e_left, 0.0, 0.5 * (e_right + e_left), 0.0])
    d_ch = np.array([0.0, e_bottom - e_top, 0.0, 0.5 * (e_bottom + e_top)])
    d_c2 = 2.0 * cw * d_cw + 2.0 * ch * d_ch
    d_rho2 = np.array([2.0 * (cx - gx), 2.0 * (cy - gy), 0.0, 0.0])
    d_dist = (d_rho2 * c2 - rho2 * d_c2) / c2**2

    # --- aspect term (weight treated as a constant) ---------------------
    diff = math.atan(gw / gh) - math.atan(w / h)
    v = (4.0 / math.pi**2) * diff**2
    if overlap < 0.5:
        alpha = 0.0
    else:
        denom = (1.0 - overlap) + v
        alpha = v / denom if denom > 0.0 else 0.0
    scale = 2.0 * (4.0 / math.pi**2) * diff
    d_v = np.array(
        [0.0, 0.0, scale * (-h / (w * w + h * h)), scale * (w / (w * w + h * h))]
    )

    return -d_iou + d_dist + alpha * d_v
