"""Pydantic request/response models for the HTTP service.

These mirror the library's domain types one-to-one; the route handlers only
convert between the two and call the core functions.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class CornerBox(BaseModel):
    x1: float
    y1: float
    x2: float
    y2: float


class CenterBox(BaseModel):
    cx: float
    cy: float
    w: float
    h: float


class DetectionModel(BaseModel):
    box: CenterBox
    class_id: int = 0
    confidence: float = Field(ge=0.0, le=1.0)


class DetectionSetModel(BaseModel):
    image_id: str
    detections: list[DetectionModel] = []
    source_tag: str = ""


class AnnotationModel(BaseModel):
    class_id: int = 0
    box: CenterBox


class GroundTruthSetModel(BaseModel):
    image_id: str
    boxes: list[AnnotationModel] = []


class ImageTensorModel(BaseModel):
    height: int = Field(ge=1)
    width: int = Field(ge=1)
    channels: int = Field(ge=1)
    data: list[float]  # row-major (height, width, channels)


class ImageRecordModel(BaseModel):
    image_id: str
    path: str
    width: int
    height: int
    tod: str = "Unknown"
    source: str = "Fish"


class ManifestModel(BaseModel):
    records: list[ImageRecordModel] = []
    annotations: dict[str, list[AnnotationModel]] = {}


# ---- requests -------------------------------------------------------------

class BoxPairRequest(BaseModel):
    a: CornerBox
    b: CornerBox


class CiouRequest(BaseModel):
    pred: CornerBox
    gt: CornerBox


class FilterRequest(BaseModel):
    detections: DetectionSetModel
    threshold: float = Field(ge=0.0, le=1.0)


class NmsRequest(BaseModel):
    detections: DetectionSetModel
    iou_threshold: float = Field(default=0.45, ge=0.0, le=1.0)


class EnsembleRequest(BaseModel):
    sets: list[DetectionSetModel]
    iou_threshold: float = Field(default=0.55, ge=0.0, le=1.0)
    per_model_nms: bool = True
    nms_iou: float = Field(default=0.45, ge=0.0, le=1.0)


class DecodeRequest(BaseModel):
    image_id: str = "image"
    grid_size: int = Field(ge=1)
    stride: float = Field(gt=0.0)
    anchors: list[tuple[float, float]]  # 3 (w, h) pairs for this scale
    logits: list[float]  # row-major (row, col, anchor, [tx ty tw th to])
    conf_threshold: float = Field(default=0.25, ge=0.0, le=1.0)
    normalize: bool = True  # divide by grid_size * stride for file-style coords


class FocusRequest(BaseModel):
    image: ImageTensorModel
    inverse: bool = False


class AnchorsRequest(BaseModel):
    boxes: list[tuple[float, float]]
    k: int = 9
    seed: int = 0


class EvalRequest(BaseModel):
    detections: list[DetectionSetModel]
    ground_truth: list[GroundTruthSetModel]
    iou_threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    sweep: list[float] | None = None
    report_confidence: float = Field(default=0.25, ge=0.0, le=1.0)


class ChallengingRequest(BaseModel):
    detections: list[DetectionSetModel]
    ground_truth: list[GroundTruthSetModel]
    iou_threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    map_threshold: float = Field(ge=0.0, le=1.0)


class SeparatorPredictRequest(BaseModel):
    checkpoint: str  # checkpoint file content
    image: ImageTensorModel
    day_threshold: float = Field(default=0.5, ge=0.0, le=1.0)


class PartitionRequest(BaseModel):
    manifest: ManifestModel
    rule: str


class UpsampleRequest(BaseModel):
    manifest: ManifestModel
    challenging: list[str]
    factor: int = Field(default=10, ge=1)


class IngestPseudoRequest(BaseModel):
    detections: list[DetectionSetModel]
    images: list[ImageRecordModel]
    min_confidence: float = Field(default=0.5, ge=0.0, le=1.0)


# ---- responses ------------------------------------------------------------

class HealthResponse(BaseModel):
    status: str
    version: str


class OverlapResponse(BaseModel):
    iou: float
    giou: float
    diou: float


class CiouResponse(BaseModel):
    s_overlap: float
    d_center: float
    v_aspect: float
    total: float


class AnchorsResponse(BaseModel):
    anchors: list[tuple[float, float]]


class EvalResponse(BaseModel):
    mean_precision: float
    mean_recall: float
    map50: float
    map5095: float
    per_class_ap: dict[str, float]
    per_image_map: dict[str, float]
    tp: int
    fp: int
    fn: int
    report_confidence: float


class ChallengingResponse(BaseModel):
    image_ids: list[str]


class SeparatorPredictResponse(BaseModel):
    probability: float
    label: str  # "Day" or "Night"
