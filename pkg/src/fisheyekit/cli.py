"""Command-line surface of the toolkit.

Every subcommand is a thin wrapper over the library: it parses files into
the library's types, calls the same functions the in-process API exposes,
and writes results in the canonical text formats (floats at 9 significant
digits, output sorted by image_id). Exit codes: 0 success, 1 validation
failure, 2 input parse failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import datasets, evaluation, head, postprocess, separator
from .formats import ParseError, fmt_float, iter_data_lines, parse_float

RAWGRID_HEADER = "#rawgrid v1"


def _parallel_map(fn, items):
    """Run a pure per-item function over a worker pool; order preserved."""
    if len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor() as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# extra file readers owned by the CLI
# ---------------------------------------------------------------------------

def read_box_sizes(path) -> list[tuple[float, float]]:
    """`w h` per line, file order preserved (clustering is seeded on it)."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    sizes = []
    for line_no, line in iter_data_lines(text):
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(str(path), line_no, f"expected `w h`, got {line!r}")
        w = parse_float(parts[0], str(path), line_no, "w")
        h = parse_float(parts[1], str(path), line_no, "h")
        if w <= 0 or h <= 0:
            raise ParseError(str(path), line_no, "box sides must be positive")
        sizes.append((w, h))
    if not sizes:
        raise ParseError(str(path), 1, "box file is empty")
    return sizes


def read_image_list(path) -> list[tuple[str, str]]:
    """`image_id path` per line."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    entries = []
    for line_no, line in iter_data_lines(text):
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(str(path), line_no, f"expected `image_id path`, got {line!r}")
        entries.append((parts[0], parts[1]))
    return entries


def read_id_list(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return [line.split()[0] for _, line in iter_data_lines(text)]


def read_rawgrid(path) -> tuple[str, head.RawGridPrediction]:
    """One scale's logits: versioned header, image/grid/anchors directives,
    then grid_size^2 x 3 rows of `tx ty tw th to` in (row, col, anchor) order."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != RAWGRID_HEADER:
        raise ParseError(str(path), 1, f"expected header {RAWGRID_HEADER!r}")
    image_id = None
    grid_size = stride = None
    anchors = None
    rows = []
    for line_no, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "image" and len(parts) == 2:
            image_id = parts[1]
        elif parts[0] == "grid" and len(parts) == 3:
            grid_size = int(parts[1]) if parts[1].isdigit() else None
            if grid_size is None or grid_size < 1:
                raise ParseError(str(path), line_no, f"bad grid size: {parts[1]!r}")
            stride = parse_float(parts[2], str(path), line_no, "stride")
        elif parts[0] == "anchors" and len(parts) == 7:
            values = [parse_float(p, str(path), line_no, "anchor") for p in parts[1:]]
            try:
                anchors = tuple(
                    head.Anchor(w=values[i], h=values[i + 1]) for i in (0, 2, 4)
                )
            except ValueError as exc:
                raise ParseError(str(path), line_no, str(exc)) from None
        elif len(parts) == 5:
            rows.append([parse_float(p, str(path), line_no, "logit") for p in parts])
        else:
            raise ParseError(str(path), line_no, f"unrecognized line: {line!r}")
    if image_id is None or grid_size is None or anchors is None:
        raise ParseError(str(path), 1, "missing image/grid/anchors directives")
    expected = grid_size * grid_size * 3
    if len(rows) != expected:
        raise ParseError(
            str(path), len(lines), f"expected {expected} logit rows, got {len(rows)}"
        )
    raw = head.RawGridPrediction.from_flat(grid_size, stride, anchors, np.array(rows))
    return image_id, raw


def write_rawgrid(path, image_id: str, raw: head.RawGridPrediction) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(RAWGRID_HEADER + "\n")
        fh.write(f"image {image_id}\n")
        fh.write(f"grid {raw.grid_size} {fmt_float(raw.stride)}\n")
        fh.write(
            "anchors "
            + " ".join(f"{fmt_float(a.w)} {fmt_float(a.h)}" for a in raw.anchors)
            + "\n"
        )
        for row in raw.values.reshape(-1, 5):
            fh.write(" ".join(fmt_float(v) for v in row) + "\n")


def _load_image_tensor(path) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npy":
        arr = np.load(p)
        if arr.ndim != 3:
            raise ValueError(f"{p}: expected a (H, W, C) array, got shape {arr.shape}")
        return arr.astype(float)
    from PIL import Image

    with Image.open(p) as im:
        return np.asarray(im.convert("RGB"), dtype=float) / 255.0


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    gt_sets = evaluation.read_ground_truth(args.gt)
    det_sets = postprocess.read_detections(args.det)
    sweep = tuple(args.sweep) if args.sweep else evaluation.DEFAULT_SWEEP
    report = evaluation.evaluate(
        det_sets,
        gt_sets,
        iou_threshold=args.iou,
        sweep=sweep,
        report_confidence=args.conf,
    )
    print(report.render())
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    if args.per_image:
        lines = [
            f"{image_id} {fmt_float(score)}"
            for image_id, score in sorted(report.per_image_map.items())
        ]
        Path(args.per_image).write_text("\n".join(lines) + ("\n" if lines else ""))
    return 0


def cmd_ensemble(args) -> int:
    per_file = [postprocess.read_detections(p, source_tag=Path(p).stem) for p in args.inputs]
    image_ids = sorted({s.image_id for sets in per_file for s in sets})

    def fuse_one(image_id):
        sets = []
        for file_sets in per_file:
            for s in file_sets:
                if s.image_id == image_id:
                    if not args.no_nms:
                        s = postprocess.nms(s, args.nms_iou)
                    sets.append(s)
        return postprocess.ensemble_fuse(sets, args.iou)

    fused = _parallel_map(fuse_one, image_ids)
    postprocess.write_detections(fused, args.out)
    return 0


def cmd_nms(args) -> int:
    det_sets = postprocess.read_detections(args.input)

    def process(s):
        return postprocess.nms(postprocess.filter_confidence(s, args.conf), args.iou)

    postprocess.write_detections(_parallel_map(process, det_sets), args.out)
    return 0


def cmd_decode(args) -> int:
    by_image: dict[str, list[head.Detection]] = {}
    for path in args.inputs:
        image_id, raw = read_rawgrid(path)
        frame = raw.grid_size * raw.stride
        for det in head.decode_grid(raw, args.conf):
            box = det.box
            by_image.setdefault(image_id, []).append(
                head.Detection(
                    box=box.__class__(
                        cx=box.cx / frame, cy=box.cy / frame, w=box.w / frame, h=box.h / frame
                    ),
                    class_id=det.class_id,
                    confidence=det.confidence,
                )
            )
    sets = [
        postprocess.DetectionSet(image_id=image_id, detections=dets)
        for image_id, dets in sorted(by_image.items())
    ]
    postprocess.write_detections(sets, args.out)
    return 0


def cmd_anchors(args) -> int:
    sizes = read_box_sizes(args.boxes)
    anchor_set = head.kmeans_anchors(sizes, k=args.k, seed=args.seed)
    head.save_anchors(anchor_set, args.out)
    return 0


def cmd_route(args) -> int:
    params = separator.load_checkpoint(args.checkpoint)
    entries = read_image_list(args.images)

    def classify(entry):
        image_id, path = entry
        try:
            img = separator.load_image_rgb(path, args.side)
        except OSError as exc:
            raise ParseError(path, 1, f"unreadable image: {exc}") from None
        return image_id, separator.route(params, img, day_threshold=args.threshold)

    routed = sorted(_parallel_map(classify, entries))
    day = [image_id for image_id, tod in routed if tod == "Day"]
    night = [image_id for image_id, tod in routed if tod == "Night"]
    for image_id, tod in routed:
        print(f"{tod} {image_id}")
    if args.day_out:
        Path(args.day_out).write_text("\n".join(day) + ("\n" if day else ""))
    if args.night_out:
        Path(args.night_out).write_text("\n".join(night) + ("\n" if night else ""))
    return 0


def cmd_separator_train(args) -> int:
    manifest = datasets.load_manifest(args.manifest)
    cfg = separator.TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        seed=args.seed,
        batch_size=args.batch,
        input_side=args.side,
    )
    root = Path(args.root) if args.root else Path(args.manifest).parent
    examples = []
    for rec in manifest.records:
        if rec.tod == datasets.TimeOfDay.DAY:
            label = 1
        elif rec.tod == datasets.TimeOfDay.NIGHT:
            label = 0
        else:
            continue
        img_path = Path(rec.path)
        if not img_path.is_absolute():
            img_path = root / img_path
        try:
            examples.append((separator.load_image_rgb(img_path, cfg.input_side), label))
        except OSError as exc:
            raise ParseError(str(img_path), 1, f"unreadable image: {exc}") from None
    params, history = separator.separator_train(examples, cfg)
    separator.save_checkpoint(params, args.out)
    for epoch, (accuracy, loss) in enumerate(history, start=1):
        print(f"epoch {epoch} accuracy {fmt_float(accuracy)} loss {fmt_float(loss)}")
    return 0


def cmd_partition(args) -> int:
    manifest = datasets.load_manifest(args.manifest)
    try:
        rule = datasets.PartitionRule(args.rule)
    except ValueError:
        raise ValueError(
            f"unknown rule {args.rule!r}; choose from "
            + ", ".join(r.value for r in datasets.PartitionRule)
        ) from None
    datasets.save_manifest(datasets.partition(manifest, rule), args.out)
    return 0


def cmd_select_challenging(args) -> int:
    gt_sets = evaluation.read_ground_truth(args.gt)
    det_sets = postprocess.read_detections(args.det)
    scores = evaluation.per_image_map(det_sets, gt_sets, args.iou)
    picked = evaluation.select_challenging(scores, args.threshold)
    text = "\n".join(picked) + ("\n" if picked else "")
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_upsample(args) -> int:
    manifest = datasets.load_manifest(args.manifest)
    challenging = read_id_list(args.challenging)
    out = datasets.upsample_challenging(manifest, challenging, factor=args.factor)
    datasets.save_manifest(out, args.out)
    return 0


def cmd_ingest_pseudo(args) -> int:
    det_sets = postprocess.read_detections(args.det)
    images = [
        datasets.ImageRecord(
            image_id=image_id, path=path, width=args.width, height=args.height
        )
        for image_id, path in read_image_list(args.images)
    ]
    manifest = datasets.ingest_pseudo(det_sets, images, min_confidence=args.min_conf)
    datasets.save_manifest(manifest, args.out)
    return 0


def cmd_focus(args) -> int:
    img = _load_image_tensor(args.input)
    out = head.focus_inverse(img) if args.inverse else head.focus_transform(img)
    np.save(args.out, out)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _sweep_values(text: str) -> list[float]:
    values = [float(tok) for tok in text.split(",") if tok.strip()]
    if not values or not all(0.0 <= v <= 1.0 for v in values):
        raise argparse.ArgumentTypeError("sweep values must lie in [0,1]")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fisheyekit",
        description="Fisheye vehicle-detection pipeline toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--det", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--conf", type=float, default=0.25, help="reporting confidence for TP/FP/FN counts")
    p.add_argument("--sweep", type=_sweep_values, default=None, help="comma-separated confidence thresholds")
    p.add_argument("--json", default=None, help="also write the report as JSON")
    p.add_argument("--per-image", default=None, help="write per-image mAP scores")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ensemble", help="fuse detections from several models")
    p.add_argument("inputs", nargs="+", help="detection files, one per model")
    p.add_argument("--out", required=True)
    p.add_argument("--iou", type=float, default=0.55, help="cluster IoU threshold")
    p.add_argument("--nms-iou", type=float, default=0.45, help="per-model NMS before fusing")
    p.add_argument("--no-nms", action="store_true", help="skip the per-model NMS")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("nms", help="confidence filter + non-max suppression")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iou", type=float, default=0.45)
    p.add_argument("--conf", type=float, default=0.25)
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("decode", help="decode raw head grids into detections")
    p.add_argument("inputs", nargs="+", help="rawgrid files")
    p.add_argument("--out", required=True)
    p.add_argument("--conf", type=float, default=0.25)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("anchors", help="cluster box sizes into anchor priors")
    p.add_argument("--boxes", required=True, help="file of `w h` box sizes")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_anchors)

    p = sub.add_parser("route", help="split images into day and night lists")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True, help="file of `image_id path` lines")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--side", type=int, default=64, help="separator input resolution")
    p.add_argument("--day-out", default=None)
    p.add_argument("--night-out", default=None)
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("separator-train", help="train the day-night separator")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--root", default=None, help="base directory for image paths")
    p.set_defaults(func=cmd_separator_train)

    p = sub.add_parser("partition", help="filter a manifest by source and time of day")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rule", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("select-challenging", help="list images scoring below a mAP cut")
    p.add_argument("--gt", required=True)
    p.add_argument("--det", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_select_challenging)

    p = sub.add_parser("upsample", help="repeat challenging images in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--challenging", required=True, help="file of image ids")
    p.add_argument("--factor", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_upsample)

    p = sub.add_parser("ingest-pseudo", help="turn detections into a pseudo-label manifest")
    p.add_argument("--det", required=True)
    p.add_argument("--images", required=True, help="file of `image_id path` lines")
    p.add_argument("--out", required=True)
    p.add_argument("--min-conf", type=float, default=0.5)
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--height", type=int, default=1024)
    p.set_defaults(func=cmd_ingest_pseudo)

    p = sub.add_parser("focus", help="space-to-depth transform of an image tensor")
    p.add_argument("--in", dest="input", required=True, help=".npy tensor or image file")
    p.add_argument("--out", required=True, help=".npy output")
    p.add_argument("--inverse", action="store_true")
    p.set_defaults(func=cmd_focus)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
