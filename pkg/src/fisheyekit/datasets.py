"""Dataset manifests: partition rules, pseudo-label ingestion, upsampling.

A manifest is a text file with header `#manifest v1` and one record per
line, `image_id path width height tod source`; its annotations live in a
sibling file (same path + `.ann`) in the ground-truth format. All
operations return new manifests; nothing is mutated in place.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

from .evaluation import Annotation, GroundTruthSet, read_ground_truth, write_ground_truth
from .formats import ParseError, iter_data_lines, parse_int
from .postprocess import DetectionSet

__all__ = [
    "TimeOfDay",
    "Source",
    "PartitionRule",
    "ImageRecord",
    "Manifest",
    "partition",
    "ingest_pseudo",
    "upsample_challenging",
    "load_manifest",
    "save_manifest",
    "annotations_path",
]

MANIFEST_HEADER = "#manifest v1"


class TimeOfDay(enum.Enum):
    DAY = "Day"
    NIGHT = "Night"
    UNKNOWN = "Unknown"


class Source(enum.Enum):
    FISH = "Fish"
    BDD = "BDD"
    PSEUDO = "Pseudo"


class PartitionRule(enum.Enum):
    FISH_DAY = "FishDay"
    FISH_NIGHT = "FishNight"
    FISH_MIX = "FishMix"
    BDD_DAY = "BddDay"
    BDD_NIGHT = "BddNight"
    BDD_MIX = "BddMix"
    PSEUDO = "Pseudo"


# rule -> (source filter, tod filter or None for any)
_RULE_FILTERS = {
    PartitionRule.FISH_DAY: (Source.FISH, TimeOfDay.DAY),
    PartitionRule.FISH_NIGHT: (Source.FISH, TimeOfDay.NIGHT),
    PartitionRule.FISH_MIX: (Source.FISH, None),
    PartitionRule.BDD_DAY: (Source.BDD, TimeOfDay.DAY),
    PartitionRule.BDD_NIGHT: (Source.BDD, TimeOfDay.NIGHT),
    PartitionRule.BDD_MIX: (Source.BDD, None),
    PartitionRule.PSEUDO: (Source.PSEUDO, None),
}


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    path: str
    width: int
    height: int
    tod: TimeOfDay = TimeOfDay.UNKNOWN
    source: Source = Source.FISH

    def __post_init__(self):
        if not self.image_id or any(ch.isspace() for ch in self.image_id):
            raise ValueError(f"invalid image_id: {self.image_id!r}")
        if self.image_id.startswith("#"):
            raise ValueError(f"image_id may not start with '#': {self.image_id!r}")
        if any(ch.isspace() for ch in self.path):
            raise ValueError(f"path may not contain whitespace: {self.path!r}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive: {self.width}x{self.height}")


@dataclass
class Manifest:
    records: list[ImageRecord] = field(default_factory=list)
    annotations: dict[str, list[Annotation]] = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.image_id for r in self.records]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate image_ids in manifest: {dupes}")
        unknown = sorted(set(self.annotations) - set(ids))
        if unknown:
            raise ValueError(f"annotations reference unknown image_ids: {unknown}")

    def __len__(self) -> int:
        return len(self.records)


def partition(m: Manifest, rule: PartitionRule) -> Manifest:
    """Filter records by (source, time-of-day); Mix rules ignore time of day."""
    source, tod = _RULE_FILTERS[rule]
    kept = [
        r
        for r in m.records
        if r.source == source and (tod is None or r.tod == tod)
    ]
    kept_ids = {r.image_id for r in kept}
    anns = {k: list(v) for k, v in m.annotations.items() if k in kept_ids}
    return Manifest(records=kept, annotations=anns)


def ingest_pseudo(
    det_sets: list[DetectionSet],
    images: list[ImageRecord],
    min_confidence: float = 0.5,
) -> Manifest:
    """Turn model detections into a pseudo-labeled training manifest.

    Detections at or above the confidence cut become annotations (the score
    is dropped); every listed image becomes a record tagged Pseudo/Day even
    when no detection survives.
    """
    known = {r.image_id for r in images}
    for dset in det_sets:
        if dset.image_id not in known:
            raise ValueError(f"detections reference unknown image_id: {dset.image_id!r}")
    records = [
        ImageRecord(
            image_id=r.image_id,
            path=r.path,
            width=r.width,
            height=r.height,
            tod=TimeOfDay.DAY,
            source=Source.PSEUDO,
        )
        for r in images
    ]
    annotations: dict[str, list[Annotation]] = {}
    for dset in det_sets:
        kept = [
            Annotation(class_id=d.class_id, box=d.box)
            for d in dset.detections
            if d.confidence >= min_confidence
        ]
        if kept:
            annotations.setdefault(dset.image_id, []).extend(kept)
    return Manifest(records=records, annotations=annotations)


def upsample_challenging(
    m: Manifest, challenging: list[str], factor: int = 10
) -> Manifest:
    """Repeat challenging records `factor` times so they recur every epoch.

    Duplicates keep original order and sit adjacent, with ids suffixed
    `#1` ... `#factor`; annotations are duplicated alongside. `factor` 1 is
    the identity.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1: {factor}")
    known = {r.image_id for r in m.records}
    unknown = sorted(set(challenging) - known)
    if unknown:
        raise ValueError(f"challenging ids not in manifest: {unknown}")
    if factor == 1 or not challenging:
        return Manifest(
            records=list(m.records),
            annotations={k: list(v) for k, v in m.annotations.items()},
        )
    target = set(challenging)
    records: list[ImageRecord] = []
    annotations: dict[str, list[Annotation]] = {}
    for r in m.records:
        if r.image_id not in target:
            records.append(r)
            if r.image_id in m.annotations:
                annotations[r.image_id] = list(m.annotations[r.image_id])
            continue
        for k in range(1, factor + 1):
            dup_id = f"{r.image_id}#{k}"
            records.append(
                ImageRecord(
                    image_id=dup_id,
                    path=r.path,
                    width=r.width,
                    height=r.height,
                    tod=r.tod,
                    source=r.source,
                )
            )
            if r.image_id in m.annotations:
                annotations[dup_id] = list(m.annotations[r.image_id])
    return Manifest(records=records, annotations=annotations)


def annotations_path(path) -> Path:
    """Sibling annotation file of a manifest file."""
    p = Path(path)
    return p.with_name(p.name + ".ann")


def load_manifest(path) -> Manifest:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    first = next((line.strip() for line in text.splitlines() if line.strip()), None)
    if first is not None and first != MANIFEST_HEADER:
        raise ParseError(str(path), 1, f"missing header {MANIFEST_HEADER!r}")
    records = []
    for line_no, line in iter_data_lines(text):
        parts = line.split()
        if len(parts) != 6:
            raise ParseError(
                str(path),
                line_no,
                f"expected `image_id path width height tod source`, got {len(parts)} fields",
            )
        image_id, img_path = parts[0], parts[1]
        width = parse_int(parts[2], str(path), line_no, "width")
        height = parse_int(parts[3], str(path), line_no, "height")
        try:
            tod = TimeOfDay(parts[4])
        except ValueError:
            raise ParseError(str(path), line_no, f"unknown tod: {parts[4]!r}") from None
        try:
            source = Source(parts[5])
        except ValueError:
            raise ParseError(str(path), line_no, f"unknown source: {parts[5]!r}") from None
        try:
            records.append(
                ImageRecord(
                    image_id=image_id,
                    path=img_path,
                    width=width,
                    height=height,
                    tod=tod,
                    source=source,
                )
            )
        except ValueError as exc:
            raise ParseError(str(path), line_no, str(exc)) from None

    annotations: dict[str, list[Annotation]] = {}
    ann_file = annotations_path(path)
    if ann_file.exists():
        for gset in read_ground_truth(ann_file):
            annotations[gset.image_id] = list(gset.boxes)
    try:
        return Manifest(records=records, annotations=annotations)
    except ValueError as exc:
        raise ParseError(str(path), 1, str(exc)) from None


def save_manifest(m: Manifest, path) -> None:
    path = Path(path)
    lines = [MANIFEST_HEADER]
    for r in m.records:
        lines.append(
            f"{r.image_id} {r.path} {r.width} {r.height} {r.tod.value} {r.source.value}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    gt_sets = [
        GroundTruthSet(image_id=image_id, boxes=list(boxes))
        for image_id, boxes in sorted(m.annotations.items())
        if boxes
    ]
    write_ground_truth(gt_sets, annotations_path(path))
