"""FastAPI application wrapping the core toolkit.

Each endpoint converts its pydantic payload to the library's domain types,
invokes the same function the CLI uses, and converts the result back.
ValueError (including file-format parse errors) maps to HTTP 422.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, datasets, evaluation, geometry, head, postprocess, separator
from . import schemas


def _to_center(m: schemas.CenterBox) -> geometry.BoxCenter:
    return geometry.BoxCenter(cx=m.cx, cy=m.cy, w=m.w, h=m.h)


def _to_corner(m: schemas.CornerBox) -> geometry.BoxCorner:
    return geometry.BoxCorner(x1=m.x1, y1=m.y1, x2=m.x2, y2=m.y2)


def _to_detection(m: schemas.DetectionModel) -> head.Detection:
    return head.Detection(box=_to_center(m.box), class_id=m.class_id, confidence=m.confidence)


def _to_detection_set(m: schemas.DetectionSetModel) -> postprocess.DetectionSet:
    return postprocess.DetectionSet(
        image_id=m.image_id,
        detections=[_to_detection(d) for d in m.detections],
        source_tag=m.source_tag,
    )


def _from_detection_set(s: postprocess.DetectionSet) -> schemas.DetectionSetModel:
    return schemas.DetectionSetModel(
        image_id=s.image_id,
        source_tag=s.source_tag,
        detections=[
            schemas.DetectionModel(
                box=schemas.CenterBox(cx=d.box.cx, cy=d.box.cy, w=d.box.w, h=d.box.h),
                class_id=d.class_id,
                confidence=d.confidence,
            )
            for d in s.detections
        ],
    )


def _to_gt_set(m: schemas.GroundTruthSetModel) -> evaluation.GroundTruthSet:
    return evaluation.GroundTruthSet(
        image_id=m.image_id,
        boxes=[
            evaluation.Annotation(class_id=a.class_id, box=_to_center(a.box))
            for a in m.boxes
        ],
    )


def _to_image(m: schemas.ImageTensorModel) -> np.ndarray:
    expected = m.height * m.width * m.channels
    if len(m.data) != expected:
        raise ValueError(
            f"data length {len(m.data)} != height*width*channels = {expected}"
        )
    return np.array(m.data, dtype=float).reshape(m.height, m.width, m.channels)


def _from_image(arr: np.ndarray) -> schemas.ImageTensorModel:
    h, w, c = arr.shape
    return schemas.ImageTensorModel(
        height=h, width=w, channels=c, data=[float(v) for v in arr.ravel()]
    )


def _to_record(m: schemas.ImageRecordModel) -> datasets.ImageRecord:
    return datasets.ImageRecord(
        image_id=m.image_id,
        path=m.path,
        width=m.width,
        height=m.height,
        tod=datasets.TimeOfDay(m.tod),
        source=datasets.Source(m.source),
    )


def _to_manifest(m: schemas.ManifestModel) -> datasets.Manifest:
    return datasets.Manifest(
        records=[_to_record(r) for r in m.records],
        annotations={
            image_id: [
                evaluation.Annotation(class_id=a.class_id, box=_to_center(a.box))
                for a in anns
            ]
            for image_id, anns in m.annotations.items()
        },
    )


def _from_manifest(m: datasets.Manifest) -> schemas.ManifestModel:
    return schemas.ManifestModel(
        records=[
            schemas.ImageRecordModel(
                image_id=r.image_id,
                path=r.path,
                width=r.width,
                height=r.height,
                tod=r.tod.value,
                source=r.source.value,
            )
            for r in m.records
        ],
        annotations={
            image_id: [
                schemas.AnnotationModel(
                    class_id=a.class_id,
                    box=schemas.CenterBox(cx=a.box.cx, cy=a.box.cy, w=a.box.w, h=a.box.h),
                )
                for a in anns
            ]
            for image_id, anns in m.annotations.items()
        },
    )


def create_app() -> FastAPI:
    app = FastAPI(
        title="fisheyekit",
        version=__version__,
        description="Detection postprocessing, evaluation, day-night routing "
        "and dataset plumbing for fisheye vehicle detection.",
    )

    @app.exception_handler(ValueError)
    async def value_error_handler(_: Request, exc: ValueError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    # --- box arithmetic ---------------------------------------------------

    @app.post("/boxes/overlap", response_model=schemas.OverlapResponse)
    def boxes_overlap(req: schemas.BoxPairRequest):
        a, b = _to_corner(req.a), _to_corner(req.b)
        return schemas.OverlapResponse(
            iou=geometry.iou(a, b), giou=geometry.giou(a, b), diou=geometry.diou(a, b)
        )

    @app.post("/boxes/ciou", response_model=schemas.CiouResponse)
    def boxes_ciou(req: schemas.CiouRequest):
        terms = geometry.ciou_loss(_to_corner(req.pred), _to_corner(req.gt))
        return schemas.CiouResponse(
            s_overlap=terms.s_overlap,
            d_center=terms.d_center,
            v_aspect=terms.v_aspect,
            total=terms.total,
        )

    # --- per-image postprocessing ------------------------------------------

    @app.post("/detections/filter", response_model=schemas.DetectionSetModel)
    def detections_filter(req: schemas.FilterRequest):
        out = postprocess.filter_confidence(_to_detection_set(req.detections), req.threshold)
        return _from_detection_set(out)

    @app.post("/detections/nms", response_model=schemas.DetectionSetModel)
    def detections_nms(req: schemas.NmsRequest):
        out = postprocess.nms(_to_detection_set(req.detections), req.iou_threshold)
        return _from_detection_set(out)

    @app.post("/detections/ensemble", response_model=schemas.DetectionSetModel)
    def detections_ensemble(req: schemas.EnsembleRequest):
        sets = [_to_detection_set(s) for s in req.sets]
        if req.per_model_nms:
            sets = [postprocess.nms(s, req.nms_iou) for s in sets]
        return _from_detection_set(postprocess.ensemble_fuse(sets, req.iou_threshold))

    # --- head --------------------------------------------------------------

    @app.post("/head/decode", response_model=schemas.DetectionSetModel)
    def head_decode(req: schemas.DecodeRequest):
        anchors = tuple(head.Anchor(w=w, h=h) for w, h in req.anchors)
        raw = head.RawGridPrediction.from_flat(req.grid_size, req.stride, anchors, req.logits)
        dets = head.decode_grid(raw, req.conf_threshold)
        if req.normalize:
            frame = req.grid_size * req.stride
            dets = [
                head.Detection(
                    box=geometry.BoxCenter(
                        cx=d.box.cx / frame,
                        cy=d.box.cy / frame,
                        w=d.box.w / frame,
                        h=d.box.h / frame,
                    ),
                    class_id=d.class_id,
                    confidence=d.confidence,
                )
                for d in dets
            ]
        return _from_detection_set(
            postprocess.DetectionSet(image_id=req.image_id, detections=dets)
        )

    @app.post("/head/focus", response_model=schemas.ImageTensorModel)
    def head_focus(req: schemas.FocusRequest):
        img = _to_image(req.image)
        out = head.focus_inverse(img) if req.inverse else head.focus_transform(img)
        return _from_image(out)

    @app.post("/head/anchors", response_model=schemas.AnchorsResponse)
    def head_anchors(req: schemas.AnchorsRequest):
        aset = head.kmeans_anchors(req.boxes, k=req.k, seed=req.seed)
        return schemas.AnchorsResponse(anchors=[(a.w, a.h) for a in aset.anchors])

    # --- evaluation ----------------------------------------------------------

    @app.post("/eval", response_model=schemas.EvalResponse)
    def eval_corpus(req: schemas.EvalRequest):
        report = evaluation.evaluate(
            [_to_detection_set(s) for s in req.detections],
            [_to_gt_set(g) for g in req.ground_truth],
            iou_threshold=req.iou_threshold,
            sweep=tuple(req.sweep) if req.sweep else evaluation.DEFAULT_SWEEP,
            report_confidence=req.report_confidence,
        )
        return schemas.EvalResponse(**report.to_dict())

    @app.post("/eval/challenging", response_model=schemas.ChallengingResponse)
    def eval_challenging(req: schemas.ChallengingRequest):
        scores = evaluation.per_image_map(
            [_to_detection_set(s) for s in req.detections],
            [_to_gt_set(g) for g in req.ground_truth],
            req.iou_threshold,
        )
        return schemas.ChallengingResponse(
            image_ids=evaluation.select_challenging(scores, req.map_threshold)
        )

    # --- separator -----------------------------------------------------------

    @app.post("/separator/predict", response_model=schemas.SeparatorPredictResponse)
    def separator_predict(req: schemas.SeparatorPredictRequest):
        params = separator.parse_checkpoint(req.checkpoint)
        probability = separator.separator_forward(params, _to_image(req.image))
        label = "Day" if probability >= req.day_threshold else "Night"
        return schemas.SeparatorPredictResponse(probability=probability, label=label)

    # --- datasets --------------------------------------------------------------

    @app.post("/datasets/partition", response_model=schemas.ManifestModel)
    def datasets_partition(req: schemas.PartitionRequest):
        rule = datasets.PartitionRule(req.rule)
        return _from_manifest(datasets.partition(_to_manifest(req.manifest), rule))

    @app.post("/datasets/upsample", response_model=schemas.ManifestModel)
    def datasets_upsample(req: schemas.UpsampleRequest):
        out = datasets.upsample_challenging(
            _to_manifest(req.manifest), req.challenging, factor=req.factor
        )
        return _from_manifest(out)

    @app.post("/datasets/ingest-pseudo", response_model=schemas.ManifestModel)
    def datasets_ingest(req: schemas.IngestPseudoRequest):
        out = datasets.ingest_pseudo(
            [_to_detection_set(s) for s in req.detections],
            [_to_record(r) for r in req.images],
            min_confidence=req.min_confidence,
        )
        return _from_manifest(out)

    return app
