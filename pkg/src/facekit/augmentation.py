"""Scale-level augmentation planners and the bisection scale-control
calibrator.

Planners never touch pixels; they emit a :class:`TransformPlan` describing
resize / crop / pad decisions which :func:`apply_plan` (annotations) and
:func:`apply_raster` (pixels) execute. All randomness flows through an
explicit seeded ``numpy.random.Generator``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import MatchConfig
from .geometry import (
    ANCHOR_SCALE_SET,
    LAYER_NAMES,
    PYRAMID_LAYERS,
    Box,
    face_scale,
    iou,
)

PLAN_FORMAT_VERSION = 1

# Per-layer gt scale bands: contiguous, increasing, ending at the 640 frame.
DEFAULT_SCALE_RANGES = {
    "p2": (8.4, 20.7),
    "p3": (20.7, 48.2),
    "p4": (48.2, 106.2),
    "p5": (106.2, 212.4),
    "p6": (212.4, 420.8),
    "p7": (420.8, 640.0),
}

RSC_FACTORS = (0.1, 0.3, 0.5, 0.7, 0.9)


class AugmentationError(ValueError):
    pass


@dataclass(frozen=True)
class SseConfig:
    tr_p5: float = 0.20
    tr_p6: float = 0.16  # (1 - tr_p5) * 0.20
    scale_ranges: dict = field(default_factory=lambda: dict(DEFAULT_SCALE_RANGES))
    output_side: int = 640
    pre_resize_range: tuple[int, int] = (640, 1280)

    def __post_init__(self):
        if self.tr_p5 + self.tr_p6 > 1.0:
            raise AugmentationError("tr_p5 + tr_p6 must not exceed 1")
        prev_end = None
        for name in LAYER_NAMES:
            lo, hi = self.scale_ranges[name]
            if hi <= lo:
                raise AugmentationError(f"scale range for {name} must increase")
            if prev_end is not None and not math.isclose(lo, prev_end):
                raise AugmentationError("scale ranges must be contiguous")
            prev_end = hi


@dataclass(frozen=True)
class DasConfig:
    anchor_scale_set: tuple = ANCHOR_SCALE_SET
    r_th: float | None = None
    output_side: int = 640

    def __post_init__(self):
        if self.r_th is not None and self.r_th < 1:
            raise AugmentationError("r_th must be >= 1 when present")


@dataclass
class TransformPlan:
    """One image's augmentation decision.

    ``crop_window`` lives in post-resize coordinates (after both resize
    stages). ``pad_to`` is set when the output is zero-padded to a fixed
    square frame.
    """

    strategy: str
    image_size: tuple[int, int]
    pre_resize_ratio: float = 1.0
    target_layer: str | None = None
    sampled_face_index: int | None = None
    sampled_face_scale: float | None = None
    target_resize_ratio: float = 1.0
    crop_window: Box | None = None
    pad_to: tuple[int, int] | None = None
    fallback: str | None = None

    @property
    def total_ratio(self) -> float:
        return self.pre_resize_ratio * self.target_resize_ratio

    def frame_size(self) -> tuple[float, float]:
        """Output frame dimensions (pad frame, crop window, or resized image)."""
        if self.pad_to is not None:
            return (float(self.pad_to[0]), float(self.pad_to[1]))
        if self.crop_window is not None:
            return (self.crop_window.width, self.crop_window.height)
        w, h = self.image_size
        return (w * self.total_ratio, h * self.total_ratio)

    def to_record(self) -> dict:
        return {
            "version": PLAN_FORMAT_VERSION,
            "strategy": self.strategy,
            "image_size": list(self.image_size),
            "pre_resize_ratio": self.pre_resize_ratio,
            "target_layer": self.target_layer,
            "sampled_face_index": self.sampled_face_index,
            "sampled_face_scale": self.sampled_face_scale,
            "target_resize_ratio": self.target_resize_ratio,
            "crop_window": list(self.crop_window.as_tuple()) if self.crop_window else None,
            "pad_to": list(self.pad_to) if self.pad_to else None,
            "fallback": self.fallback,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)

    @classmethod
    def from_record(cls, rec: dict) -> "TransformPlan":
        if rec.get("version") != PLAN_FORMAT_VERSION:
            raise AugmentationError(f"unsupported plan version {rec.get('version')!r}")
        crop = rec["crop_window"]
        return cls(
            strategy=rec["strategy"],
            image_size=tuple(rec["image_size"]),
            pre_resize_ratio=rec["pre_resize_ratio"],
            target_layer=rec["target_layer"],
            sampled_face_index=rec["sampled_face_index"],
            sampled_face_scale=rec["sampled_face_scale"],
            target_resize_ratio=rec["target_resize_ratio"],
            crop_window=Box(*crop) if crop else None,
            pad_to=tuple(rec["pad_to"]) if rec["pad_to"] else None,
            fallback=rec.get("fallback"),
        )


def _crop_axis(extent: float, center: float, side: float,
               rng: np.random.Generator) -> tuple[float, float]:
    """Offset and side of a crop along one axis; the offset is uniform among
    positions that keep ``center`` inside the window."""
    if extent <= side:
        return 0.0, extent
    lo = max(0.0, center - side)
    hi = min(extent - side, center)
    hi = max(hi, lo)
    offset = float(lo + (hi - lo) * _draw(rng))
    return offset, side


def _draw(rng: np.random.Generator) -> float:
    return float(rng.random())


def mst_plan(image_size: tuple[int, int], rng: np.random.Generator) -> TransformPlan:
    """Multi-scale training: reshape the short side to an integer scale drawn
    uniformly from [640, 1280]; no crop, no pad."""
    w, h = image_size
    if w < 1 or h < 1:
        raise AugmentationError("image dimensions must be >= 1")
    s = int(rng.integers(640, 1281))
    return TransformPlan(
        strategy="mst",
        image_size=(w, h),
        pre_resize_ratio=s / min(w, h),
    )


def rsc_plan(image_size: tuple[int, int], rng: np.random.Generator) -> TransformPlan:
    """Random square crop with side = factor x short side, factor drawn from
    {0.1, 0.3, 0.5, 0.7, 0.9}, at a uniform position."""
    w, h = image_size
    if w < 1 or h < 1:
        raise AugmentationError("image dimensions must be >= 1")
    factor = RSC_FACTORS[int(rng.integers(len(RSC_FACTORS)))]
    side = factor * min(w, h)
    ox = float(rng.uniform(0, w - side))
    oy = float(rng.uniform(0, h - side))
    return TransformPlan(
        strategy="rsc",
        image_size=(w, h),
        crop_window=Box(ox, oy, ox + side, oy + side),
    )


def sse_plan(image_size: tuple[int, int], faces: list[Box], cfg: SseConfig,
             rng: np.random.Generator) -> TransformPlan:
    """Scale-steering planner: pre-resize, pick a face, pick a target pyramid
    layer (p5 with probability ``tr_p5``, p6 with ``tr_p6``, otherwise one of
    the remaining four uniformly), then resize so the face's scale lands in
    the target layer's band. The output crop keeps the face's center inside a
    ``output_side`` square, zero-padded when the resized image is smaller.
    """
    w, h = image_size
    if w < 1 or h < 1:
        raise AugmentationError("image dimensions must be >= 1")
    if not faces:
        plan = rsc_plan(image_size, rng)
        plan.strategy = "sse"
        plan.fallback = "rsc"
        return plan

    s = int(rng.integers(cfg.pre_resize_range[0], cfg.pre_resize_range[1] + 1))
    pre = s / min(w, h)

    face_idx = int(rng.integers(len(faces)))
    fs = face_scale(faces[face_idx]) * pre

    rn = _draw(rng)
    if rn < cfg.tr_p5:
        tpl = "p5"
    elif rn <= cfg.tr_p5 + cfg.tr_p6:
        tpl = "p6"
    else:
        tpl = ("p2", "p3", "p4", "p7")[int(rng.integers(4))]

    lo, hi = cfg.scale_ranges[tpl]
    target_scale = float(rng.uniform(lo, hi))
    trr = target_scale / fs

    total = pre * trr
    rw, rh = w * total, h * total
    cx, cy = faces[face_idx].center
    cx, cy = cx * total, cy * total
    n = float(cfg.output_side)
    ox, sx = _crop_axis(rw, cx, n, rng)
    oy, sy = _crop_axis(rh, cy, n, rng)

    return TransformPlan(
        strategy="sse",
        image_size=(w, h),
        pre_resize_ratio=pre,
        target_layer=tpl,
        sampled_face_index=face_idx,
        sampled_face_scale=fs,
        target_resize_ratio=trr,
        crop_window=Box(ox, oy, ox + sx, oy + sy),
        pad_to=(cfg.output_side, cfg.output_side),
    )


def nearest_anchor_scale(fs: float, scale_set=ANCHOR_SCALE_SET) -> int:
    """Anchor scale nearest to a face scale; ties go to the smaller scale."""
    return min(scale_set, key=lambda s: (abs(fs - s), s))


def das_plan(image_size: tuple[int, int], faces: list[Box], cfg: DasConfig,
             rng: np.random.Generator) -> TransformPlan:
    """Anchor-driven downscaling: pick a face, find its nearest anchor scale,
    draw a target scale uniformly from the anchor scales up to that one, and
    resize so the face reaches it (optionally clamped to [1/r_th, r_th]);
    then random ``output_side`` crop or zero-pad."""
    w, h = image_size
    if w < 1 or h < 1:
        raise AugmentationError("image dimensions must be >= 1")
    if not faces:
        plan = rsc_plan(image_size, rng)
        plan.strategy = "das"
        plan.fallback = "rsc"
        return plan

    face_idx = int(rng.integers(len(faces)))
    fs = face_scale(faces[face_idx])
    nearest = nearest_anchor_scale(fs, cfg.anchor_scale_set)
    pool = [s for s in cfg.anchor_scale_set if s <= nearest]
    sr = pool[int(rng.integers(len(pool)))]
    tr = sr / fs
    if cfg.r_th is not None:
        tr = min(max(tr, 1.0 / cfg.r_th), cfg.r_th)

    rw, rh = w * tr, h * tr
    n = float(cfg.output_side)
    ox = float(rng.uniform(0, rw - n)) if rw > n else 0.0
    oy = float(rng.uniform(0, rh - n)) if rh > n else 0.0

    return TransformPlan(
        strategy="das",
        image_size=(w, h),
        target_resize_ratio=tr,
        sampled_face_index=face_idx,
        sampled_face_scale=fs,
        crop_window=Box(ox, oy, ox + min(n, rw), oy + min(n, rh)),
        pad_to=(cfg.output_side, cfg.output_side),
    )


def transform_face(box: Box, plan: TransformPlan) -> Box | None:
    """Map one face through a plan; None when its center leaves the crop or
    the clipped box degenerates."""
    r = plan.total_ratio
    x0, y0, x1, y1 = (box.x_min * r, box.y_min * r, box.x_max * r, box.y_max * r)
    if plan.crop_window is not None:
        cw = plan.crop_window
        cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        if not (cw.x_min <= cx < cw.x_max and cw.y_min <= cy < cw.y_max):
            return None
        x0, x1 = x0 - cw.x_min, x1 - cw.x_min
        y0, y1 = y0 - cw.y_min, y1 - cw.y_min
    fw, fh = plan.frame_size()
    x0, x1 = max(0.0, x0), min(fw, x1)
    y0, y1 = max(0.0, y0), min(fh, y1)
    if x1 <= x0 or y1 <= y0:
        return None
    return Box(x0, y0, x1, y1)


def apply_plan(faces: list[Box], plan: TransformPlan) -> list[Box]:
    """Annotation-side effect of a plan: scale, translate into the crop, clip
    to the output frame, and drop faces whose centers left the crop."""
    out = []
    for box in faces:
        mapped = transform_face(box, plan)
        if mapped is not None:
            out.append(mapped)
    return out


def apply_raster(image: np.ndarray, plan: TransformPlan) -> np.ndarray:
    """Pixel-side effect of a plan: bilinear resize, crop, zero-pad."""
    import cv2

    r = plan.total_ratio
    out = image
    if not math.isclose(r, 1.0):
        h, w = image.shape[:2]
        nw, nh = max(1, round(w * r)), max(1, round(h * r))
        out = cv2.resize(image, (nw, nh), interpolation=cv2.INTER_LINEAR)
    if plan.crop_window is not None:
        cw = plan.crop_window
        x0, y0 = int(cw.x_min), int(cw.y_min)
        x1 = min(out.shape[1], x0 + int(round(cw.width)))
        y1 = min(out.shape[0], y0 + int(round(cw.height)))
        out = out[y0:y1, x0:x1]
    if plan.pad_to is not None:
        pw, ph = plan.pad_to
        shape = (ph, pw) + out.shape[2:]
        frame = np.zeros(shape, dtype=out.dtype)
        frame[: out.shape[0], : out.shape[1]] = out
        return frame
    return out


@dataclass
class ImageRecord:
    """One annotated image for dataset-level statistics and calibration."""

    width: int
    height: int
    faces: list[Box]


@dataclass
class CalibrationState:
    target_layer: str
    target_ratio: float
    interval: tuple[float, float]
    scale: float
    achieved_ratio: float
    iterations: int
    converged: bool
    trace: list[tuple[float, float]] = field(default_factory=list)


def face_matches_layer(face: Box, image_size: tuple[int, int], layer_name: str,
                       cfg: MatchConfig = MatchConfig()) -> bool:
    """Whether a lone gt would be matched in ``layer_name`` by the standard
    matcher on the full pyramid grid of the given image.

    Exact local computation: only anchors that can intersect the face are
    enumerated, layer-major, so the result (including the best-anchor
    guarantee's global argmax with lowest-index tie break) equals a full-grid
    standard match with this face as the only gt.
    """
    w, h = image_size
    best_layer = None
    best_iou = -1.0
    positive_layers: set[str] = set()
    face_area = face.area
    for layer in PYRAMID_LAYERS:
        stride, scale = layer.stride, layer.anchor_scale
        rows = math.ceil(h / stride)
        cols = math.ceil(w / stride)
        half = scale / 2.0
        c_lo = max(0, math.floor((face.x_min - half) / stride - 0.5))
        c_hi = min(cols - 1, math.ceil((face.x_max + half) / stride - 0.5))
        r_lo = max(0, math.floor((face.y_min - half) / stride - 0.5))
        r_hi = min(rows - 1, math.ceil((face.y_max + half) / stride - 0.5))
        if c_hi < c_lo or r_hi < r_lo:
            continue
        cx = stride * (np.arange(c_lo, c_hi + 1) + 0.5)
        cy = stride * (np.arange(r_lo, r_hi + 1) + 0.5)
        gx, gy = np.meshgrid(cx, cy)
        iw = np.clip(np.minimum(gx + half, face.x_max)
                     - np.maximum(gx - half, face.x_min), 0, None)
        ih = np.clip(np.minimum(gy + half, face.y_max)
                     - np.maximum(gy - half, face.y_min), 0, None)
        inter = iw * ih
        ious = inter / (scale * scale + face_area - inter)
        layer_best = float(ious.max())
        if layer_best >= cfg.pos_iou_threshold:
            positive_layers.add(layer.name)
        # Strict > keeps the earlier (lower-global-index) layer on exact ties,
        # matching the full-grid matcher's layer-major tie break.
        if layer_best > best_iou:
            best_iou = layer_best
            best_layer = layer.name
    if layer_name in positive_layers:
        return True
    return cfg.guarantee_best_anchor and best_layer == layer_name


def calibrate_scale_control(
    dataset: list[ImageRecord],
    target_layer: str,
    target_ratio: float,
    cfg: MatchConfig = MatchConfig(),
    seed: int = 0,
    interval: tuple[float, float] = (8.0, 640.0),
    max_iterations: int = 30,
    tolerance: float = 0.05,
) -> CalibrationState:
    """Bisect the sampled-face target scale until the fraction of all gts
    matched in ``target_layer`` is within ``tolerance`` of ``target_ratio``.

    One face per image is sampled once (seeded) and reused across bisection
    trials; each trial resizes every image so its sampled face reaches the
    trial scale, then counts how many of the image's gts land in the target
    layer. Each gt is matched in isolation, which equals a full standard
    match whenever gts do not compete for the same anchors.
    """
    if not dataset:
        raise AugmentationError("calibration requires a non-empty dataset")
    if not (0.0 < target_ratio < 1.0):
        raise AugmentationError("target_ratio must lie strictly in (0, 1)")

    rng = np.random.default_rng(seed)
    sampled = []
    for rec in dataset:
        if not rec.faces:
            raise AugmentationError("every image needs at least one face")
        sampled.append(rec.faces[int(rng.integers(len(rec.faces)))])

    total_faces = sum(len(rec.faces) for rec in dataset)

    def achieved(scale: float) -> float:
        hits = 0
        for rec, anchor_face in zip(dataset, sampled):
            ratio = scale / face_scale(anchor_face)
            dims = (max(1, math.ceil(rec.width * ratio)),
                    max(1, math.ceil(rec.height * ratio)))
            for face in rec.faces:
                resized = Box(face.x_min * ratio, face.y_min * ratio,
                              face.x_max * ratio, face.y_max * ratio)
                if face_matches_layer(resized, dims, target_layer, cfg):
                    hits += 1
        return hits / total_faces

    start_s, end_s = interval
    trace: list[tuple[float, float]] = []
    scale = 0.5 * (start_s + end_s)
    r_c = 0.0
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        scale = 0.5 * (start_s + end_s)
        r_c = achieved(scale)
        trace.append((scale, r_c))
        if abs(r_c - target_ratio) < tolerance:
            converged = True
            break
        if r_c > target_ratio:
            end_s = scale
        else:
            start_s = scale

    return CalibrationState(
        target_layer=target_layer,
        target_ratio=target_ratio,
        interval=(start_s, end_s),
        scale=scale,
        achieved_ratio=r_c,
        iterations=iterations,
        converged=converged,
        trace=trace,
    )


def scale_distribution(dataset: list[ImageRecord],
                       thresholds: list[float]) -> list[tuple[float, float]]:
    """Cumulative density of face scales: for each threshold t, the fraction
    of faces with scale < t. Thresholds are returned sorted ascending."""
    scales = [face_scale(f) for rec in dataset for f in rec.faces]
    if not scales:
        raise AugmentationError("dataset contains no faces")
    arr = np.sort(np.array(scales))
    out = []
    for t in sorted(thresholds):
        out.append((float(t), float(np.searchsorted(arr, t, side="left") / arr.size)))
    return out
