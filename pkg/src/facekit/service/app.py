"""FastAPI application wrapping the core library.

Every endpoint is stateless and deterministic: identical payloads (including
seeds) produce identical responses. The adapter endpoints speak contiguous
base64 little-endian buffers for foreign training loops.
"""

from __future__ import annotations

import base64
import json

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..assignment import (
    AssignmentError,
    AssignmentResult,
    MatchConfig,
    ali_ams,
    layer_match_stats,
    parse_assignment_lines,
    standard_match,
)
from ..attention import (
    AttentionError,
    LossConfig,
    combined_loss,
    discrepancy_labels,
    focal_loss,
    layer_attention_masks,
    labels_to_lines,
    mask_to_lines,
    select_high_confidence,
)
from ..augmentation import (
    AugmentationError,
    DasConfig,
    ImageRecord,
    SseConfig,
    calibrate_scale_control,
    das_plan,
    mst_plan,
    rsc_plan,
    scale_distribution,
    sse_plan,
)
from ..evaluation import (
    AnnotatedFace,
    Detection,
    EvalError,
    GroundTruthSet,
    ParseError,
    PredictionSet,
    evaluate,
    nms,
    parse_predictions,
    parse_widerface_annotations,
)
from ..geometry import Box, GeometryError, generate_anchor_grid
from . import models as m

DATA_ERRORS = (AssignmentError, AttentionError, AugmentationError,
               EvalError, GeometryError, ParseError)


def _bad_request(message: str) -> HTTPException:
    return HTTPException(status_code=400, detail=message)


def _boxes(coords: list, field: str = "faces") -> list[Box]:
    try:
        return [Box(*c) for c in coords]
    except GeometryError as exc:
        raise _bad_request(f"{field}: {exc}") from exc


def _decode_buffer(data: str, dtype: np.dtype, field: str,
                   shape: tuple[int, ...] | None = None) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise _bad_request(f"{field}: invalid base64") from exc
    dtype = np.dtype(dtype).newbyteorder("<")
    if len(raw) % dtype.itemsize:
        raise _bad_request(f"{field}: buffer length {len(raw)} not a multiple "
                           f"of element size {dtype.itemsize}")
    arr = np.frombuffer(raw, dtype=dtype)
    if shape is not None:
        try:
            arr = arr.reshape(shape)
        except ValueError:
            raise _bad_request(f"{field}: cannot reshape {arr.size} elements "
                               f"to {shape}") from None
    return arr


def _encode_buffer(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr).tobytes()).decode("ascii")


def _match_config(model: m.MatchConfigModel) -> MatchConfig:
    try:
        return MatchConfig(model.pos_iou_threshold, model.neg_iou_threshold,
                           model.guarantee_best_anchor)
    except AssignmentError as exc:
        raise _bad_request(str(exc)) from exc


def create_app() -> FastAPI:
    app = FastAPI(title="facekit", version=__version__)

    @app.get("/version", response_model=m.VersionResponse)
    def version() -> m.VersionResponse:
        return m.VersionResponse(name="facekit", version=__version__)

    @app.post("/anchors", response_model=m.AnchorsResponse)
    def anchors(req: m.AnchorsRequest) -> m.AnchorsResponse:
        grid = generate_anchor_grid(req.width, req.height)
        lines = []
        for a in grid.iter_anchors():
            b = a.box
            lines.append(f"{a.global_index} {a.layer_name} {a.row} {a.col} "
                         f"{b.x_min:.1f} {b.y_min:.1f} {b.x_max:.1f} {b.y_max:.1f}")
        return m.AnchorsResponse(count=len(grid), records="\n".join(lines) + "\n")

    @app.post("/assign", response_model=m.AssignResponse)
    def assign(req: m.AssignRequest) -> m.AssignResponse:
        if req.strategy not in ("standard", "ali-ams"):
            raise _bad_request(f"unknown strategy {req.strategy!r}")
        grid = generate_anchor_grid(req.width, req.height)
        faces = _boxes(req.faces)
        cfg = _match_config(req.config)
        scores = None
        if req.scores is not None:
            scores = np.asarray(req.scores, dtype=float)
            if scores.shape[0] != len(grid):
                raise _bad_request(
                    f"scores: expected {len(grid)} values, got {scores.shape[0]}")
        try:
            result = standard_match(grid, faces, cfg)
            if req.strategy == "ali-ams":
                if scores is None:
                    raise _bad_request("strategy 'ali-ams' requires scores")
                result = ali_ams(result, grid, faces, scores)
        except AssignmentError as exc:
            raise _bad_request(str(exc)) from exc
        return m.AssignResponse(
            lines="\n".join(result.to_lines(scores)) + "\n",
            layer_stats=layer_match_stats(result),
        )

    @app.post("/augment", response_model=m.AugmentResponse)
    def augment(req: m.AugmentRequest) -> m.AugmentResponse:
        if req.strategy not in ("mst", "rsc", "das", "sse"):
            raise _bad_request(f"unknown strategy {req.strategy!r}")
        if not req.images:
            raise _bad_request("at least one image is required")
        rng = np.random.default_rng(req.seed)
        sse_cfg = SseConfig(tr_p5=req.sse.tr_p5, tr_p6=req.sse.tr_p6,
                            output_side=req.sse.output_side)
        das_cfg = DasConfig(r_th=req.das.r_th, output_side=req.das.output_side)
        images = [((im.width, im.height), _boxes(im.faces)) for im in req.images]
        plans = []
        layer_counts: dict[str, int] = {}
        try:
            for k in range(req.n_samples):
                size, faces = images[k % len(images)]
                if req.strategy == "mst":
                    plan = mst_plan(size, rng)
                elif req.strategy == "rsc":
                    plan = rsc_plan(size, rng)
                elif req.strategy == "das":
                    plan = das_plan(size, faces, das_cfg, rng)
                else:
                    plan = sse_plan(size, faces, sse_cfg, rng)
                if plan.target_layer is not None:
                    layer_counts[plan.target_layer] = \
                        layer_counts.get(plan.target_layer, 0) + 1
                plans.append(plan.to_json_line())
        except AugmentationError as exc:
            raise _bad_request(str(exc)) from exc
        freqs = {name: count / req.n_samples
                 for name, count in sorted(layer_counts.items())}
        return m.AugmentResponse(plans="\n".join(plans) + "\n",
                                 layer_frequencies=freqs)

    @app.post("/scale-stats", response_model=m.ScaleStatsResponse)
    def scale_stats(req: m.ScaleStatsRequest) -> m.ScaleStatsResponse:
        if not req.thresholds:
            raise _bad_request("at least one threshold is required")
        try:
            gts = parse_widerface_annotations(req.annotations_text.splitlines())
            dataset = [
                ImageRecord(0, 0, [f.box for f in faces if not f.skip])
                for faces in gts.images.values()
            ]
            points = scale_distribution(dataset, req.thresholds)
        except DATA_ERRORS as exc:
            raise _bad_request(str(exc)) from exc
        csv = "threshold,fraction\n" + "".join(
            f"{t:.6f},{frac:.9f}\n" for t, frac in points)
        return m.ScaleStatsResponse(points=points, csv=csv)

    @app.post("/calibrate", response_model=m.CalibrateResponse)
    def calibrate(req: m.CalibrateRequest) -> m.CalibrateResponse:
        dataset = [ImageRecord(im.width, im.height, _boxes(im.faces))
                   for im in req.images]
        try:
            state = calibrate_scale_control(
                dataset, req.target_layer, req.target_ratio,
                _match_config(req.config), seed=req.seed,
                interval=req.interval, max_iterations=req.max_iterations)
        except DATA_ERRORS as exc:
            raise _bad_request(str(exc)) from exc
        return m.CalibrateResponse(
            target_layer=state.target_layer,
            target_ratio=state.target_ratio,
            scale=state.scale,
            achieved_ratio=state.achieved_ratio,
            iterations=state.iterations,
            converged=state.converged,
            trace=state.trace,
        )

    @app.post("/evaluate", response_model=m.EvaluateResponse)
    def run_evaluation(req: m.EvaluateRequest) -> m.EvaluateResponse:
        try:
            gts = parse_widerface_annotations(req.gt_text.splitlines())
            preds = parse_predictions(req.pred_text.splitlines())
            if req.nms is not None:
                preds = PredictionSet(images={
                    path: nms(dets, req.nms.iou_threshold, req.nms.pre_topk,
                              req.nms.post_topk)
                    for path, dets in preds.images.items()
                })
            report = evaluate(gts, preds, req.subsets, req.match_iou,
                              req.nfa_threshold, req.num_thresholds)
        except DATA_ERRORS as exc:
            raise _bad_request(str(exc)) from exc
        return m.EvaluateResponse(report=json.loads(report.to_json()),
                                  curve_csv=report.curve_csv("all"))

    @app.post("/attention", response_model=m.AttentionResponse)
    def attention(req: m.AttentionRequest) -> m.AttentionResponse:
        grid = generate_anchor_grid(req.width, req.height)
        n = len(grid)
        main = np.asarray(req.scores_main, dtype=float)
        prog = np.asarray(req.scores_progressive, dtype=float)
        for name, arr in (("scores_main", main), ("scores_progressive", prog)):
            if arr.shape[0] != n:
                raise _bad_request(f"{name}: expected {n} values, got {arr.shape[0]}")
        try:
            cfg = LossConfig(
                gamma_balance=req.config.gamma_balance,
                focal_alpha=req.config.focal_alpha,
                focal_gamma=req.config.focal_gamma,
                confidence_threshold=req.config.confidence_threshold,
                neighborhood_sizes=tuple(req.config.neighborhood_sizes),
            )
            labels, gt_indices, _ = parse_assignment_lines(
                req.assignment_lines.splitlines())
            if labels.shape[0] != n:
                raise _bad_request(
                    f"assignment_lines: expected {n} anchors, got {labels.shape[0]}")
            num_gts = int(gt_indices.max()) + 1 if gt_indices.size else 0
            assignment = AssignmentResult(grid, labels, gt_indices, max(0, num_gts))
            correct_pos, false_neg = select_high_confidence(
                main, assignment, cfg.confidence_threshold)
            confident = np.concatenate([correct_pos, false_neg])
            masks = {
                str(size): "\n".join(mask_to_lines(
                    layer_attention_masks(confident, assignment, size))) + "\n"
                for size in cfg.neighborhood_sizes
            }
            y_hc = discrepancy_labels(main, assignment, cfg.confidence_threshold)
            loss = combined_loss(main, prog, assignment.labels, y_hc, cfg)
            loss_main = focal_loss(main, assignment.labels, cfg.focal_alpha,
                                   cfg.focal_gamma)
        except DATA_ERRORS as exc:
            raise _bad_request(str(exc)) from exc
        return m.AttentionResponse(
            masks=masks,
            labels="\n".join(labels_to_lines(y_hc)) + "\n",
            loss=loss,
            loss_main=loss_main,
        )

    @app.post("/adapter/assign-flat", response_model=m.AssignFlatResponse)
    def assign_flat(req: m.AssignFlatRequest) -> m.AssignFlatResponse:
        grid = generate_anchor_grid(req.image_width, req.image_height)
        n = len(grid)
        anchors_buf = _decode_buffer(req.anchors, np.float32, "anchors", (n, 4))
        if not np.array_equal(anchors_buf, grid.boxes.astype(np.float32)):
            raise _bad_request("anchors: buffer does not match the canonical "
                               "grid for the given image dimensions")
        gts_buf = _decode_buffer(req.gts, np.float32, "gts", (-1, 4))
        scores = _decode_buffer(req.scores, np.float32, "scores", (n,))
        if np.isnan(scores).any():
            raise _bad_request("scores: NaN values are not allowed")
        faces = _boxes([tuple(map(float, row)) for row in gts_buf], "gts")
        try:
            cfg = _match_config(req.config)
            result = standard_match(grid, faces, cfg)
            result = ali_ams(result, grid, faces, scores.astype(float))
        except AssignmentError as exc:
            raise _bad_request(str(exc)) from exc
        return m.AssignFlatResponse(
            labels=_encode_buffer(result.labels),
            gt_indices=_encode_buffer(result.gt_indices),
        )

    @app.post("/adapter/evaluate-flat", response_model=m.EvaluateFlatResponse)
    def evaluate_flat(req: m.EvaluateFlatRequest) -> m.EvaluateFlatResponse:
        gts = GroundTruthSet()
        preds = PredictionSet()
        for idx, im in enumerate(req.images):
            path = f"image_{idx:05d}"
            gt_boxes = _decode_buffer(im.gt_boxes, np.float32,
                                      f"images[{idx}].gt_boxes", (-1, 4))
            gt_skip = _decode_buffer(im.gt_skip, np.int8,
                                     f"images[{idx}].gt_skip",
                                     (gt_boxes.shape[0],))
            det_boxes = _decode_buffer(im.det_boxes, np.float32,
                                       f"images[{idx}].det_boxes", (-1, 4))
            det_scores = _decode_buffer(im.det_scores, np.float32,
                                        f"images[{idx}].det_scores",
                                        (det_boxes.shape[0],))
            if np.isnan(det_scores).any():
                raise _bad_request(f"images[{idx}].det_scores: NaN values "
                                   "are not allowed")
            faces = []
            for (x0, y0, x1, y1), skip in zip(gt_boxes, gt_skip):
                faces.append(AnnotatedFace(float(x0), float(y0),
                                           float(x1 - x0), float(y1 - y0),
                                           invalid=int(skip != 0)))
            gts.images[path] = faces
            preds.images[path] = [
                Detection((float(x0), float(y0), float(x1), float(y1)), float(s))
                for (x0, y0, x1, y1), s in zip(det_boxes, det_scores)
            ]
        try:
            report = evaluate(gts, preds, match_iou=req.match_iou,
                              nfa_threshold=req.nfa_threshold,
                              num_thresholds=req.num_thresholds)
        except DATA_ERRORS as exc:
            raise _bad_request(str(exc)) from exc
        sub = report.subsets["all"]
        curve = np.array(sub.curve, dtype=np.float64)
        return m.EvaluateFlatResponse(ap=sub.ap, nfa=sub.nfa,
                                      curve=_encode_buffer(curve))

    return app


app = create_app()
