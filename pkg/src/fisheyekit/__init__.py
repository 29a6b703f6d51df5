"""Fisheye vehicle-detection pipeline toolkit.

Everything around the heavyweight detector backbone: box-loss arithmetic,
head decoding, NMS and ensemble fusion, the evaluation metric suite, the
day-night separator network, and dataset partition/upsampling/pseudo-label
plumbing. Exposed as a library, a CLI (`fisheyekit`), and a FastAPI service
(`fisheyekit serve`).
"""

from .geometry import BoxCenter, BoxCorner, CiouTerms, ciou_gradient, ciou_loss, diou, giou, iou
from .head import (
    Anchor,
    AnchorSet,
    Detection,
    RawGridPrediction,
    decode_grid,
    focus_inverse,
    focus_transform,
    kmeans_anchors,
)
from .postprocess import DetectionSet, ensemble_fuse, filter_confidence, nms
from .evaluation import (
    Annotation,
    EvalReport,
    GroundTruthSet,
    average_precision,
    evaluate,
    map_at,
    map_range,
    match_detections,
    mean_precision_recall,
    per_image_map,
    precision_recall_curve,
    select_challenging,
)
from .separator import (
    SeparatorParams,
    TrainConfig,
    route,
    separator_forward,
    separator_gradient,
    separator_train,
)
from .datasets import (
    ImageRecord,
    Manifest,
    PartitionRule,
    Source,
    TimeOfDay,
    ingest_pseudo,
    load_manifest,
    partition,
    save_manifest,
    upsample_challenging,
)

__version__ = "0.1.0"
