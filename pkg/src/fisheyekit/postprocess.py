"""Per-image detection postprocessing: confidence filter, NMS, ensemble fusion.

The detection text format carried between stages is one detection per line,
`image_id class_id confidence cx cy w h`, coordinates normalized to [0, 1]
by image width and height; `#` starts a comment line. All operations here
are pure per-image transforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .formats import ParseError, fmt_float, iter_data_lines, parse_float, parse_int
from .geometry import BoxCenter, iou
from .head import Detection

__all__ = [
    "DetectionSet",
    "filter_confidence",
    "nms",
    "ensemble_fuse",
    "read_detections",
    "write_detections",
]


@dataclass
class DetectionSet:
    """Detections of one image from one model/weight combination."""

    image_id: str
    detections: list[Detection] = field(default_factory=list)
    source_tag: str = ""

    def __post_init__(self):
        if not self.image_id or any(ch.isspace() for ch in self.image_id):
            raise ValueError(f"invalid image_id: {self.image_id!r}")
        if self.image_id.startswith("#"):
            raise ValueError(f"image_id may not start with '#': {self.image_id!r}")


def filter_confidence(dset: DetectionSet, threshold: float) -> DetectionSet:
    """Keep detections with confidence >= threshold, preserving order."""
    kept = [d for d in dset.detections if d.confidence >= threshold]
    return replace(dset, detections=kept)


def _greedy_order(detections: list[Detection]) -> list[int]:
    # confidence descending, ties by smaller area, then input order
    return sorted(
        range(len(detections)),
        key=lambda i: (-detections[i].confidence, detections[i].box.area, i),
    )


def nms(dset: DetectionSet, iou_threshold: float) -> DetectionSet:
    """Greedy non-maximum suppression.

    Repeatedly emits the highest-confidence remaining detection and drops
    every remaining one overlapping it with IoU strictly above the
    threshold. Ties on confidence break toward the smaller box, then input
    order, so output is byte-reproducible.
    """
    corners = [d.box.to_corner() for d in dset.detections]
    kept: list[int] = []
    for i in _greedy_order(dset.detections):
        if all(iou(corners[i], corners[j]) <= iou_threshold for j in kept):
            kept.append(i)
    return replace(dset, detections=[dset.detections[i] for i in kept])


def ensemble_fuse(sets: list[DetectionSet], iou_threshold: float) -> DetectionSet:
    """Fuse several models' detections for one image.

    Detections are clustered greedily in descending confidence: one joins
    the best-overlapping existing cluster whose representative has
    IoU >= threshold, provided that cluster holds nothing from the same
    source set (fusion merges across models only); otherwise it founds a
    new cluster. A multi-member cluster becomes one detection with
    confidence-weighted mean coordinates and the cluster's maximum
    confidence; singleton clusters pass through unchanged, so
    non-intersecting boxes from every model are all kept.
    """
    if not sets:
        raise ValueError("ensemble_fuse requires at least one detection set")
    image_id = sets[0].image_id
    for s in sets[1:]:
        if s.image_id != image_id:
            raise ValueError(
                f"mismatched image_ids: {image_id!r} vs {s.image_id!r}"
            )

    entries = [
        (det, set_idx)
        for set_idx, s in enumerate(sets)
        for det in s.detections
    ]
    order = sorted(
        range(len(entries)),
        key=lambda i: (-entries[i][0].confidence, entries[i][0].box.area, i),
    )

    clusters: list[dict] = []  # representative, members, source set indices
    for i in order:
        det, set_idx = entries[i]
        corner = det.box.to_corner()
        best, best_overlap = None, -1.0
        for cluster in clusters:
            if set_idx in cluster["sources"]:
                continue
            if det.class_id != cluster["rep"].class_id:
                continue
            overlap = iou(corner, cluster["rep_corner"])
            if overlap >= iou_threshold and overlap > best_overlap:
                best, best_overlap = cluster, overlap
        if best is None:
            clusters.append(
                {
                    "rep": det,
                    "rep_corner": corner,
                    "members": [det],
                    "sources": {set_idx},
                }
            )
        else:
            best["members"].append(det)
            best["sources"].add(set_idx)

    fused: list[Detection] = []
    for cluster in clusters:
        members = cluster["members"]
        if len(members) == 1:
            fused.append(members[0])
            continue
        weight = sum(d.confidence for d in members)
        box = BoxCenter(
            cx=sum(d.confidence * d.box.cx for d in members) / weight,
            cy=sum(d.confidence * d.box.cy for d in members) / weight,
            w=sum(d.confidence * d.box.w for d in members) / weight,
            h=sum(d.confidence * d.box.h for d in members) / weight,
        )
        fused.append(
            Detection(
                box=box,
                class_id=cluster["rep"].class_id,
                confidence=max(d.confidence for d in members),
            )
        )
    tag = "+".join(dict.fromkeys(s.source_tag for s in sets if s.source_tag))
    return DetectionSet(image_id=image_id, detections=fused, source_tag=tag)


def _parse_detection_row(parts, path, line_no) -> tuple[str, Detection]:
    image_id = parts[0]
    class_id = parse_int(parts[1], path, line_no, "class_id")
    conf = parse_float(parts[2], path, line_no, "confidence")
    cx = parse_float(parts[3], path, line_no, "cx")
    cy = parse_float(parts[4], path, line_no, "cy")
    w = parse_float(parts[5], path, line_no, "w")
    h = parse_float(parts[6], path, line_no, "h")
    if class_id < 0:
        raise ParseError(path, line_no, f"class_id must be >= 0: {class_id}")
    if not 0.0 <= conf <= 1.0:
        raise ParseError(path, line_no, f"confidence outside [0,1]: {conf}")
    if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
        raise ParseError(path, line_no, f"center outside [0,1]: ({cx}, {cy})")
    if w < 0 or h < 0:
        raise ParseError(path, line_no, f"negative box size: ({w}, {h})")
    det = Detection(box=BoxCenter(cx=cx, cy=cy, w=w, h=h), class_id=class_id, confidence=conf)
    return image_id, det


def read_detections(path, source_tag: str = "") -> list[DetectionSet]:
    """Parse a detection file into per-image sets, sorted by image_id."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    by_image: dict[str, list[Detection]] = {}
    for line_no, line in iter_data_lines(text):
        parts = line.split()
        if len(parts) != 7:
            raise ParseError(
                str(path),
                line_no,
                f"expected `image_id class_id confidence cx cy w h`, got {len(parts)} fields",
            )
        image_id, det = _parse_detection_row(parts, str(path), line_no)
        by_image.setdefault(image_id, []).append(det)
    return [
        DetectionSet(image_id=image_id, detections=dets, source_tag=source_tag)
        for image_id, dets in sorted(by_image.items())
    ]


def write_detections(sets: list[DetectionSet], path) -> None:
    """Write detection sets in canonical order (sorted by image_id)."""
    lines = []
    for dset in sorted(sets, key=lambda s: s.image_id):
        for d in dset.detections:
            lines.append(
                " ".join(
                    [
                        dset.image_id,
                        str(d.class_id),
                        fmt_float(d.confidence),
                        fmt_float(d.box.cx),
                        fmt_float(d.box.cy),
                        fmt_float(d.box.w),
                        fmt_float(d.box.h),
                    ]
                )
            )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
