"""Space-to-depth focus transform, anchor clustering, and head decoding.

Images are numpy arrays of shape (height, width, channels), row-major.
The focus transform interleaves the four stride-2 sub-samplings of an image
channel-wise; anchor priors come from a seeded k-means over training box
sizes under the 1 - IoU distance; raw head logits decode to detections with
the usual sigmoid/exp grid arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .formats import ParseError, fmt_float, iter_data_lines, parse_float
from .geometry import BoxCenter

__all__ = [
    "Anchor",
    "AnchorSet",
    "Detection",
    "RawGridPrediction",
    "KmeansResult",
    "focus_transform",
    "focus_inverse",
    "run_anchor_kmeans",
    "kmeans_anchors",
    "decode_grid",
    "save_anchors",
    "load_anchors",
]

# exp(t) for |t| > 20 is treated as a malformed head output
MAX_LOG_SIZE = 20.0


@dataclass(frozen=True)
class Anchor:
    """Prior (width, height) pair, in pixels."""

    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"anchor sides must be positive: ({self.w}, {self.h})")

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True, init=False)
class AnchorSet:
    """Anchors sorted by ascending area, grouped 3 per detection scale.

    The finest grid (smallest stride) gets the smallest anchors, so group 0
    of `scales` belongs to the finest scale.
    """

    anchors: tuple[Anchor, ...]

    def __init__(self, anchors: Sequence[Anchor]):
        ordered = tuple(sorted(anchors, key=lambda a: (a.area, a.w, a.h)))
        if not ordered:
            raise ValueError("AnchorSet requires at least one anchor")
        object.__setattr__(self, "anchors", ordered)

    @property
    def scales(self) -> tuple[tuple[Anchor, ...], ...]:
        if len(self.anchors) % 3 != 0:
            raise ValueError(
                f"cannot group {len(self.anchors)} anchors into scales of 3"
            )
        return tuple(
            self.anchors[i : i + 3] for i in range(0, len(self.anchors), 3)
        )


@dataclass(frozen=True)
class Detection:
    """One decoded box with its class id and confidence score."""

    box: BoxCenter
    class_id: int = 0
    confidence: float = 1.0

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class_id must be >= 0: {self.class_id}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence outside [0,1]: {self.confidence}")


@dataclass
class RawGridPrediction:
    """Raw head logits for one scale: (tx, ty, tw, th, to) per cell per anchor."""

    grid_size: int
    stride: float
    anchors: tuple[Anchor, Anchor, Anchor]
    values: np.ndarray  # shape (grid_size, grid_size, 3, 5), axis 0 = row

    def __post_init__(self):
        self.anchors = tuple(self.anchors)
        if len(self.anchors) != 3:
            raise ValueError(f"expected 3 anchors per scale, got {len(self.anchors)}")
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.grid_size, self.grid_size, 3, 5)
        if self.values.shape != expected:
            raise ValueError(
                f"values shape {self.values.shape} != expected {expected}"
            )

    @classmethod
    def from_flat(cls, grid_size, stride, anchors, flat) -> "RawGridPrediction":
        """Build from a flat row-major (row, col, anchor, component) sequence."""
        arr = np.asarray(flat, dtype=float).reshape(grid_size, grid_size, 3, 5)
        return cls(grid_size=grid_size, stride=stride, anchors=tuple(anchors), values=arr)


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3:
        raise ValueError(f"image must be (H, W, C), got shape {img.shape}")
    return img


def focus_transform(img: np.ndarray) -> np.ndarray:
    """Stride-2 space-to-depth: (H, W, C) -> (H/2, W/2, 4C).

    The four sub-samplings (even/even, even/odd, odd/even, odd/odd rows x
    cols) are concatenated channel-wise in that fixed order.
    """
    img = _check_image(img)
    h, w, _ = img.shape
    if h % 2 != 0 or w % 2 != 0:
        raise ValueError(f"focus_transform needs even height and width, got {h}x{w}")
    return np.concatenate(
        [
            img[0::2, 0::2, :],
            img[0::2, 1::2, :],
            img[1::2, 0::2, :],
            img[1::2, 1::2, :],
        ],
        axis=2,
    )


def focus_inverse(img: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`focus_transform`; needs channels % 4 == 0."""
    img = _check_image(img)
    h, w, c = img.shape
    if c % 4 != 0:
        raise ValueError(f"focus_inverse needs channels divisible by 4, got {c}")
    cq = c // 4
    out = np.empty((h * 2, w * 2, cq), dtype=img.dtype)
    out[0::2, 0::2, :] = img[:, :, 0 * cq : 1 * cq]
    out[0::2, 1::2, :] = img[:, :, 1 * cq : 2 * cq]
    out[1::2, 0::2, :] = img[:, :, 2 * cq : 3 * cq]
    out[1::2, 1::2, :] = img[:, :, 3 * cq : 4 * cq]
    return out


def _pair_distances(wh: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """1 - IoU of co-centered boxes; wh (n, 2) vs centroids (k, 2) -> (n, k)."""
    inter = np.minimum(wh[:, None, :], centroids[None, :, :]).prod(axis=2)
    union = wh.prod(axis=1)[:, None] + centroids.prod(axis=1)[None, :] - inter
    return 1.0 - inter / union


def _farthest_point_init(wh: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded first pick, then greedy farthest-from-chosen; avoids duplicates."""
    centroids = [wh[int(rng.integers(len(wh)))]]
    while len(centroids) < k:
        dists = _pair_distances(wh, np.array(centroids)).min(axis=1)
        centroids.append(wh[int(np.argmax(dists))])
    return np.array(centroids, dtype=float)


def _objective(wh: np.ndarray, centroids: np.ndarray, assign: np.ndarray) -> float:
    dists = _pair_distances(wh, centroids)
    return float(dists[np.arange(len(wh)), assign].sum())


def _repair_empty(wh, centroids, assign, k):
    # keep exactly k live clusters: seed each empty one with the box farthest
    # from its current centroid, drawn from a cluster that can spare it
    for c in range(k):
        if np.any(assign == c):
            continue
        counts = np.bincount(assign, minlength=k)
        dists = _pair_distances(wh, centroids)[np.arange(len(wh)), assign]
        dists[counts[assign] < 2] = -1.0
        j = int(np.argmax(dists))
        centroids[c] = wh[j]
        assign[j] = c
    return assign


@dataclass
class KmeansResult:
    centroids: np.ndarray  # (k, 2) mean (w, h) per cluster
    assignments: np.ndarray  # (n,) cluster index per box
    objective_history: list[float] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_history[-1]


def run_anchor_kmeans(
    boxes: Sequence[tuple[float, float]], k: int, seed: int, max_iter: int = 300
) -> KmeansResult:
    """Lloyd's iteration under the 1 - IoU distance with mean (w, h) updates.

    Deterministic given the seed. Stops at an assignment fixpoint, at
    `max_iter`, or as soon as a mean update would increase the objective
    (the mean is not the exact 1 - IoU minimizer, so monotonicity is
    enforced rather than assumed).
    """
    wh = np.asarray(boxes, dtype=float)
    if wh.ndim != 2 or wh.shape[1] != 2 or len(wh) == 0:
        raise ValueError("boxes must be a non-empty list of (w, h) pairs")
    if np.any(wh <= 0):
        raise ValueError("all box dimensions must be positive")
    distinct = len(np.unique(wh, axis=0))
    if k < 1 or k > distinct:
        raise ValueError(f"k={k} must be in [1, number of distinct boxes = {distinct}]")

    rng = np.random.default_rng(seed)
    centroids = _farthest_point_init(wh, k, rng)
    assign = np.argmin(_pair_distances(wh, centroids), axis=1)
    assign = _repair_empty(wh, centroids, assign, k)
    history = [_objective(wh, centroids, assign)]

    for _ in range(max_iter):
        new_centroids = centroids.copy()
        for c in range(k):
            members = wh[assign == c]
            if len(members):
                new_centroids[c] = members.mean(axis=0)
        new_assign = np.argmin(_pair_distances(wh, new_centroids), axis=1)
        new_assign = _repair_empty(wh, new_centroids, new_assign, k)
        obj = _objective(wh, new_centroids, new_assign)
        if obj > history[-1] + 1e-12:
            break
        converged = np.array_equal(new_assign, assign) and np.array_equal(
            new_centroids, centroids
        )
        centroids, assign = new_centroids, new_assign
        history.append(obj)
        if converged:
            break
    return KmeansResult(centroids=centroids, assignments=assign, objective_history=history)


def kmeans_anchors(
    boxes: Sequence[tuple[float, float]], k: int = 9, seed: int = 0
) -> AnchorSet:
    """Cluster training box sizes into k anchor priors, area-sorted."""
    result = run_anchor_kmeans(boxes, k=k, seed=seed)
    return AnchorSet([Anchor(w=float(w), h=float(h)) for w, h in result.centroids])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free for any logit
    return 0.5 * (1.0 + np.tanh(np.asarray(x, dtype=float) / 2.0))


def decode_grid(raw: RawGridPrediction, conf_threshold: float) -> list[Detection]:
    """Decode one scale's logits into detections above the confidence cut.

    Cell (row, col) with anchor (pw, ph) decodes to
    cx = (sigmoid(tx) + col) * stride, cy = (sigmoid(ty) + row) * stride,
    w = pw * exp(tw), h = ph * exp(th), confidence = sigmoid(to).
    Detections are emitted in row-major (row, col, anchor) order with the
    single vehicle class id 0.
    """
    if not 0.0 <= conf_threshold <= 1.0:
        raise ValueError(f"conf_threshold outside [0,1]: {conf_threshold}")
    vals = raw.values
    if np.any(np.abs(vals[..., 2:4]) > MAX_LOG_SIZE):
        raise ValueError(
            f"log-size logits exceed ±{MAX_LOG_SIZE:g}; exp would overflow"
        )
    conf = _sigmoid(vals[..., 4])
    rows, cols = np.meshgrid(
        np.arange(raw.grid_size), np.arange(raw.grid_size), indexing="ij"
    )
    anchor_w = np.array([a.w for a in raw.anchors])
    anchor_h = np.array([a.h for a in raw.anchors])
    cx = (_sigmoid(vals[..., 0]) + cols[..., None]) * raw.stride
    cy = (_sigmoid(vals[..., 1]) + rows[..., None]) * raw.stride
    w = anchor_w[None, None, :] * np.exp(vals[..., 2])
    h = anchor_h[None, None, :] * np.exp(vals[..., 3])

    detections = []
    for r, c, a in np.argwhere(conf >= conf_threshold):
        detections.append(
            Detection(
                box=BoxCenter(
                    cx=float(cx[r, c, a]),
                    cy=float(cy[r, c, a]),
                    w=float(w[r, c, a]),
                    h=float(h[r, c, a]),
                ),
                class_id=0,
                confidence=float(conf[r, c, a]),
            )
        )
    return detections


def save_anchors(anchor_set: AnchorSet, path) -> None:
    """Write one `w h` line per anchor, finest scale (smallest area) first."""
    lines = [f"{fmt_float(a.w)} {fmt_float(a.h)}" for a in anchor_set.anchors]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_anchors(path) -> AnchorSet:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    anchors = []
    for line_no, line in iter_data_lines(text):
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(str(path), line_no, f"expected `w h`, got {line!r}")
        w = parse_float(parts[0], str(path), line_no, "w")
        h = parse_float(parts[1], str(path), line_no, "h")
        if w <= 0 or h <= 0:
            raise ParseError(str(path), line_no, f"anchor sides must be positive")
        anchors.append(Anchor(w=w, h=h))
    if not anchors:
        raise ParseError(str(path), 1, "anchor file is empty")
    return AnchorSet(anchors)
