"""Deterministic anchor-matching, scale augmentation planning, and detection
evaluation toolkit for pyramid-based face detectors."""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    ANCHOR_SCALE_SET,
    Box,
    PyramidLayer,
    AnchorGrid,
    center_distance,
    face_scale,
    generate_anchor_grid,
    iou,
)
from .assignment import (  # noqa: F401
    IGNORE,
    NEGATIVE,
    POSITIVE,
    AssignmentResult,
    MatchConfig,
    ali_ams,
    layer_match_stats,
    standard_match,
)
from .augmentation import (  # noqa: F401
    DasConfig,
    ImageRecord,
    SseConfig,
    TransformPlan,
    apply_plan,
    apply_raster,
    calibrate_scale_control,
    das_plan,
    mst_plan,
    rsc_plan,
    scale_distribution,
    sse_plan,
)
from .attention import (  # noqa: F401
    LossConfig,
    attention_mask,
    combine_features,
    combined_loss,
    discrepancy_labels,
    focal_loss,
    select_high_confidence,
)
from .evaluation import (  # noqa: F401
    EvalReport,
    GroundTruthSet,
    PredictionSet,
    average_precision,
    count_false_alarms,
    evaluate,
    match_detections,
    nms,
    parse_predictions,
    parse_widerface_annotations,
    pr_curve,
)
