"""Detection metric suite: matching, PR curves, AP, mAP, and per-image scores.

A detection is a true positive when it is the highest-confidence claim on a
same-class ground-truth box with IoU at or above the matching threshold;
every ground truth is matched at most once. AP integrates the all-points
interpolated precision envelope over recall; mAP averages AP over the
classes that have ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .formats import ParseError, fmt_float, iter_data_lines, parse_float, parse_int
from .geometry import BoxCenter, iou
from .head import Detection
from .postprocess import DetectionSet

__all__ = [
    "Annotation",
    "GroundTruthSet",
    "MatchResult",
    "EvalReport",
    "match_detections",
    "precision_recall_curve",
    "average_precision",
    "map_at",
    "map_range",
    "mean_precision_recall",
    "per_image_map",
    "select_challenging",
    "evaluate",
    "read_ground_truth",
    "write_ground_truth",
    "DEFAULT_SWEEP",
    "RANGE_THRESHOLDS",
]

# confidence sweep for mean precision / mean recall: 0.05, 0.10, ..., 0.95
DEFAULT_SWEEP = tuple(round(0.05 * i, 2) for i in range(1, 20))
# IoU thresholds for the @0.5:0.95 range metric
RANGE_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class Annotation:
    """One ground-truth box: class id plus a normalized center-size box."""

    class_id: int
    box: BoxCenter

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class_id must be >= 0: {self.class_id}")
        b = self.box
        if not (0.0 <= b.cx <= 1.0 and 0.0 <= b.cy <= 1.0 and b.w <= 1.0 and b.h <= 1.0):
            raise ValueError(f"annotation coordinates outside [0,1]: {b}")
        if b.w <= 0.0 or b.h <= 0.0:
            raise ValueError(f"annotation box must have positive size: {b}")


@dataclass
class GroundTruthSet:
    """All ground-truth boxes of one image."""

    image_id: str
    boxes: list[Annotation] = field(default_factory=list)


@dataclass
class MatchResult:
    """TP/FP flags aligned with the detection input order, plus the FN count."""

    tp_flags: list[bool]
    unmatched_gt: int

    @property
    def tp(self) -> int:
        return sum(self.tp_flags)

    @property
    def fp(self) -> int:
        return len(self.tp_flags) - self.tp


def _greedy_match(
    detections: list[Detection], annotations: list[Annotation], iou_threshold: float
) -> MatchResult:
    """Greedy descending-confidence matching; each GT claimed at most once."""
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    gt_corners = [a.box.to_corner() for a in annotations]
    used = [False] * len(annotations)
    flags = [False] * len(detections)
    for i in order:
        det = detections[i]
        det_corner = det.box.to_corner()
        best_j, best_iou = -1, -1.0
        for j, ann in enumerate(annotations):
            if used[j] or ann.class_id != det.class_id:
                continue
            overlap = iou(det_corner, gt_corners[j])
            if overlap >= iou_threshold and overlap > best_iou:
                best_j, best_iou = j, overlap
        if best_j >= 0:
            used[best_j] = True
            flags[i] = True
    return MatchResult(tp_flags=flags, unmatched_gt=used.count(False))


def match_detections(
    dets: DetectionSet, gts: GroundTruthSet, iou_threshold: float
) -> MatchResult:
    """Match one image's detections against its ground truth."""
    if dets.image_id != gts.image_id:
        raise ValueError(f"image_id mismatch: {dets.image_id!r} vs {gts.image_id!r}")
    return _greedy_match(dets.detections, gts.boxes, iou_threshold)


def _group_corpus(det_sets, gt_sets):
    dets_by_image: dict[str, list[Detection]] = {}
    for dset in det_sets:
        dets_by_image.setdefault(dset.image_id, []).extend(dset.detections)
    gts_by_image: dict[str, list[Annotation]] = {}
    for gset in gt_sets:
        gts_by_image.setdefault(gset.image_id, []).extend(gset.boxes)
    return dets_by_image, gts_by_image


def precision_recall_curve(
    det_sets: list[DetectionSet],
    gt_sets: list[GroundTruthSet],
    class_id: int,
    iou_threshold: float,
) -> list[tuple[float, float]]:
    """Cumulative (recall, precision) points over the corpus for one class."""
    dets_by_image, gts_by_image = _group_corpus(det_sets, gt_sets)
    total_gt = sum(
        sum(1 for a in boxes if a.class_id == class_id)
        for boxes in gts_by_image.values()
    )
    if total_gt == 0:
        raise ValueError(f"class {class_id} has no ground truth; AP undefined")

    scored: list[tuple[float, str, int, bool]] = []
    for image_id in sorted(dets_by_image):
        dets = [d for d in dets_by_image[image_id] if d.class_id == class_id]
        anns = [a for a in gts_by_image.get(image_id, []) if a.class_id == class_id]
        result = _greedy_match(dets, anns, iou_threshold)
        for idx, det in enumerate(dets):
            scored.append((det.confidence, image_id, idx, result.tp_flags[idx]))
    scored.sort(key=lambda t: (-t[0], t[1], t[2]))

    points = []
    tp = 0
    for rank, (_, _, _, is_tp) in enumerate(scored, start=1):
        tp += is_tp
        points.append((tp / total_gt, tp / rank))
    return points


def average_precision(curve: list[tuple[float, float]]) -> float:
    """All-points interpolation: non-increasing envelope integrated over recall."""
    if not curve:
        return 0.0
    recalls = [r for r, _ in curve]
    envelope = [p for _, p in curve]
    for i in range(len(envelope) - 2, -1, -1):
        envelope[i] = max(envelope[i], envelope[i + 1])
    ap = 0.0
    prev_recall = 0.0
    for r, p in zip(recalls, envelope):
        if r > prev_recall:
            ap += (r - prev_recall) * p
            prev_recall = r
    return ap


def _classes_with_gt(gt_sets: list[GroundTruthSet]) -> list[int]:
    return sorted({a.class_id for g in gt_sets for a in g.boxes})


def per_class_ap(det_sets, gt_sets, iou_threshold) -> dict[int, float]:
    classes = _classes_with_gt(gt_sets)
    if not classes:
        raise ValueError("no class has ground truth; mAP undefined")
    return {
        c: average_precision(precision_recall_curve(det_sets, gt_sets, c, iou_threshold))
        for c in classes
    }


def map_at(det_sets, gt_sets, iou_threshold) -> float:
    """Mean AP over the classes that have at least one ground-truth box."""
    aps = per_class_ap(det_sets, gt_sets, iou_threshold)
    return sum(aps.values()) / len(aps)


def map_range(det_sets, gt_sets) -> float:
    """Mean of map_at over IoU thresholds 0.50, 0.55, ..., 0.95."""
    values = [map_at(det_sets, gt_sets, t) for t in RANGE_THRESHOLDS]
    return sum(values) / len(values)


def mean_precision_recall(
    det_sets,
    gt_sets,
    iou_threshold: float,
    sweep: tuple[float, ...] = DEFAULT_SWEEP,
) -> tuple[float, float]:
    """Precision and recall averaged over a confidence-threshold sweep.

    A threshold that leaves no predictions contributes precision 1 (nothing
    claimed, nothing wrong); an empty ground-truth corpus gives recall 1.
    """
    if not sweep:
        raise ValueError("sweep must be non-empty")
    dets_by_image, gts_by_image = _group_corpus(det_sets, gt_sets)
    total_gt = sum(len(b) for b in gts_by_image.values())
    images = sorted(set(dets_by_image) | set(gts_by_image))

    precisions, recalls = [], []
    for threshold in sweep:
        tp = fp = 0
        for image_id in images:
            dets = [
                d
                for d in dets_by_image.get(image_id, [])
                if d.confidence >= threshold
            ]
            result = _greedy_match(dets, gts_by_image.get(image_id, []), iou_threshold)
            tp += result.tp
            fp += result.fp
        precisions.append(tp / (tp + fp) if tp + fp > 0 else 1.0)
        recalls.append(tp / total_gt if total_gt > 0 else 1.0)
    return sum(precisions) / len(precisions), sum(recalls) / len(recalls)


def per_image_map(det_sets, gt_sets, iou_threshold) -> dict[str, float]:
    """mAP of each image evaluated as a one-image corpus.

    Images with no ground truth score 1.0 when they also have no
    detections, else 0.0.
    """
    dets_by_image, gts_by_image = _group_corpus(det_sets, gt_sets)
    scores: dict[str, float] = {}
    for image_id in sorted(set(dets_by_image) | set(gts_by_image)):
        dets = dets_by_image.get(image_id, [])
        anns = gts_by_image.get(image_id, [])
        if not anns:
            scores[image_id] = 1.0 if not dets else 0.0
            continue
        scores[image_id] = map_at(
            [DetectionSet(image_id=image_id, detections=dets)],
            [GroundTruthSet(image_id=image_id, boxes=anns)],
            iou_threshold,
        )
    return scores


def select_challenging(per_image: dict[str, float], map_threshold: float) -> list[str]:
    """Image ids scoring below the threshold, worst first (ties by id)."""
    picked = [(score, image_id) for image_id, score in per_image.items() if score < map_threshold]
    return [image_id for _, image_id in sorted(picked)]


@dataclass
class EvalReport:
    mean_precision: float
    mean_recall: float
    map50: float
    map5095: float
    per_class_ap: dict[int, float]
    per_image_map: dict[str, float]
    counts: tuple[int, int, int]  # (TP, FP, FN) at the reporting confidence
    report_confidence: float

    def to_dict(self) -> dict:
        return {
            "mean_precision": self.mean_precision,
            "mean_recall": self.mean_recall,
            "map50": self.map50,
            "map5095": self.map5095,
            "per_class_ap": {str(k): v for k, v in self.per_class_ap.items()},
            "per_image_map": dict(self.per_image_map),
            "tp": self.counts[0],
            "fp": self.counts[1],
            "fn": self.counts[2],
            "report_confidence": self.report_confidence,
        }

    def render(self) -> str:
        lines = [
            f"mean_precision {fmt_float(self.mean_precision)}",
            f"mean_recall {fmt_float(self.mean_recall)}",
            f"map50 {fmt_float(self.map50)}",
            f"map5095 {fmt_float(self.map5095)}",
            f"tp {self.counts[0]}",
            f"fp {self.counts[1]}",
            f"fn {self.counts[2]}",
        ]
        for class_id in sorted(self.per_class_ap):
            lines.append(f"ap class {class_id} {fmt_float(self.per_class_ap[class_id])}")
        return "\n".join(lines)


def evaluate(
    det_sets: list[DetectionSet],
    gt_sets: list[GroundTruthSet],
    iou_threshold: float = 0.5,
    sweep: tuple[float, ...] = DEFAULT_SWEEP,
    report_confidence: float = 0.25,
) -> EvalReport:
    """Assemble the full metric report for one corpus."""
    aps = per_class_ap(det_sets, gt_sets, iou_threshold)
    map50 = sum(aps.values()) / len(aps)
    map5095 = map_range(det_sets, gt_sets)
    mp, mr = mean_precision_recall(det_sets, gt_sets, iou_threshold, sweep)
    image_scores = per_image_map(det_sets, gt_sets, iou_threshold)

    dets_by_image, gts_by_image = _group_corpus(det_sets, gt_sets)
    tp = fp = fn = 0
    for image_id in sorted(set(dets_by_image) | set(gts_by_image)):
        dets = [
            d
            for d in dets_by_image.get(image_id, [])
            if d.confidence >= report_confidence
        ]
        result = _greedy_match(dets, gts_by_image.get(image_id, []), iou_threshold)
        tp += result.tp
        fp += result.fp
        fn += result.unmatched_gt
    return EvalReport(
        mean_precision=mp,
        mean_recall=mr,
        map50=map50,
        map5095=map5095,
        per_class_ap=aps,
        per_image_map=image_scores,
        counts=(tp, fp, fn),
        report_confidence=report_confidence,
    )


def read_ground_truth(path) -> list[GroundTruthSet]:
    """Parse `image_id class_id cx cy w h` rows into per-image sets."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    by_image: dict[str, list[Annotation]] = {}
    for line_no, line in iter_data_lines(text):
        parts = line.split()
        if len(parts) != 6:
            raise ParseError(
                str(path),
                line_no,
                f"expected `image_id class_id cx cy w h`, got {len(parts)} fields",
            )
        image_id = parts[0]
        class_id = parse_int(parts[1], str(path), line_no, "class_id")
        cx = parse_float(parts[2], str(path), line_no, "cx")
        cy = parse_float(parts[3], str(path), line_no, "cy")
        w = parse_float(parts[4], str(path), line_no, "w")
        h = parse_float(parts[5], str(path), line_no, "h")
        try:
            ann = Annotation(class_id=class_id, box=BoxCenter(cx=cx, cy=cy, w=w, h=h))
        except ValueError as exc:
            raise ParseError(str(path), line_no, str(exc)) from None
        by_image.setdefault(image_id, []).append(ann)
    return [
        GroundTruthSet(image_id=image_id, boxes=boxes)
        for image_id, boxes in sorted(by_image.items())
    ]


def write_ground_truth(gt_sets: list[GroundTruthSet], path) -> None:
    lines = []
    for gset in sorted(gt_sets, key=lambda g: g.image_id):
        for a in gset.boxes:
            lines.append(
                " ".join(
                    [
                        gset.image_id,
                        str(a.class_id),
                        fmt_float(a.box.cx),
                        fmt_float(a.box.cy),
                        fmt_float(a.box.w),
                        fmt_float(a.box.h),
                    ]
                )
            )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
