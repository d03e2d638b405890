"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field

BoxT = tuple[float, float, float, float]


class VersionResponse(BaseModel):
    name: str
    version: str


class MatchConfigModel(BaseModel):
    pos_iou_threshold: float = 0.5
    neg_iou_threshold: float = 0.4
    guarantee_best_anchor: bool = True


class AnchorsRequest(BaseModel):
    width: int = Field(ge=1)
    height: int = Field(ge=1)


class AnchorsResponse(BaseModel):
    count: int
    records: str  # 'index layer row col x0 y0 x1 y1' lines


class ImageAnnotationModel(BaseModel):
    width: int = Field(ge=1)
    height: int = Field(ge=1)
    faces: list[BoxT] = []


class AssignRequest(BaseModel):
    width: int = Field(ge=1)
    height: int = Field(ge=1)
    faces: list[BoxT] = []
    strategy: str = "standard"  # standard | ali-ams
    scores: list[float] | None = None
    config: MatchConfigModel = MatchConfigModel()


class AssignResponse(BaseModel):
    lines: str  # 'global_index label gt_index score' lines
    layer_stats: dict[str, dict]


class SseConfigModel(BaseModel):
    tr_p5: float = 0.20
    tr_p6: float = 0.16
    output_side: int = 640


class DasConfigModel(BaseModel):
    r_th: float | None = None
    output_side: int = 640


class AugmentRequest(BaseModel):
    strategy: str  # mst | rsc | das | sse
    seed: int
    n_samples: int = Field(ge=1)
    images: list[ImageAnnotationModel]
    sse: SseConfigModel = SseConfigModel()
    das: DasConfigModel = DasConfigModel()


class AugmentResponse(BaseModel):
    plans: str  # one JSON plan record per line
    layer_frequencies: dict[str, float]


class ScaleStatsRequest(BaseModel):
    annotations_text: str
    thresholds: list[float]


class ScaleStatsResponse(BaseModel):
    points: list[tuple[float, float]]
    csv: str


class CalibrateRequest(BaseModel):
    images: list[ImageAnnotationModel]
    target_layer: str
    target_ratio: float
    seed: int = 0
    max_iterations: int = 30
    interval: tuple[float, float] = (8.0, 640.0)
    config: MatchConfigModel = MatchConfigModel()


class CalibrateResponse(BaseModel):
    target_layer: str
    target_ratio: float
    scale: float
    achieved_ratio: float
    iterations: int
    converged: bool
    trace: list[tuple[float, float]]


class NmsConfigModel(BaseModel):
    iou_threshold: float = 0.6
    pre_topk: int = 5000
    post_topk: int = 750


class EvaluateRequest(BaseModel):
    gt_text: str
    pred_text: str
    subsets: dict[str, dict[str, list[int]]] | None = None
    nms: NmsConfigModel | None = None
    match_iou: float = 0.5
    nfa_threshold: float = 0.8
    num_thresholds: int = 1000


class EvaluateResponse(BaseModel):
    report: dict
    curve_csv: str


class LossConfigModel(BaseModel):
    gamma_balance: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    confidence_threshold: float = 0.5
    neighborhood_sizes: list[int] = [3, 5]


class AttentionRequest(BaseModel):
    width: int = Field(ge=1)
    height: int = Field(ge=1)
    assignment_lines: str  # 'global_index label gt_index score' lines
    scores_main: list[float]
    scores_progressive: list[float]
    config: LossConfigModel = LossConfigModel()


class AttentionResponse(BaseModel):
    masks: dict[str, str]  # neighborhood size -> 'layer row col' lines
    labels: str  # 'global_index label' lines
    loss: float
    loss_main: float


class AssignFlatRequest(BaseModel):
    """Flat-buffer assignment call; buffers are base64 little-endian."""

    image_width: int = Field(ge=1)
    image_height: int = Field(ge=1)
    anchors: str  # float32, n x 4 row-major
    gts: str  # float32, m x 4 row-major
    scores: str  # float32, n
    config: MatchConfigModel = MatchConfigModel()


class AssignFlatResponse(BaseModel):
    labels: str  # int8, n
    gt_indices: str  # int32, n


class FlatImage(BaseModel):
    gt_boxes: str  # float32, m x 4
    gt_skip: str  # int8, m
    det_boxes: str  # float32, k x 4
    det_scores: str  # float32, k


class EvaluateFlatRequest(BaseModel):
    images: list[FlatImage]
    match_iou: float = 0.5
    nfa_threshold: float = 0.8
    num_thresholds: int = 1000


class EvaluateFlatResponse(BaseModel):
    ap: float
    nfa: int
    curve: str  # float64, n x 3 (precision, recall, threshold)
