"""Detection evaluation: annotation / prediction parsing in the Wider Face
text layouts, NMS, greedy detection-to-gt matching, PR curves, average
precision, and false-alarm counting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .geometry import Box, iou_matrix

# Detection match flags.
MATCHED = 1
FALSE_POSITIVE = 0
DISCARDED = -1  # hit a skip-marked gt; excluded from the tally

NMS_IOU_DEFAULT = 0.6
NMS_PRE_TOPK_DEFAULT = 5000
NMS_POST_TOPK_DEFAULT = 750
MATCH_IOU_DEFAULT = 0.5
NFA_SCORE_DEFAULT = 0.8
NUM_THRESHOLDS_DEFAULT = 1000


class ParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class EvalError(ValueError):
    pass


@dataclass
class AnnotatedFace:
    """One ground-truth record: raw x/y/w/h plus attribute flags.

    ``skip`` marks faces excluded from matching (invalid flag set or
    degenerate extent); they follow ignore semantics during evaluation.
    """

    x: float
    y: float
    w: float
    h: float
    blur: int = 0
    expression: int = 0
    illumination: int = 0
    invalid: int = 0
    occlusion: int = 0
    pose: int = 0

    @property
    def skip(self) -> bool:
        return self.invalid == 1 or self.w <= 0 or self.h <= 0

    @property
    def box(self) -> Box | None:
        if self.w <= 0 or self.h <= 0:
            return None
        return Box.from_xywh(self.x, self.y, self.w, self.h)

    def xyxy(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.x + self.w, self.y + self.h)


@dataclass
class GroundTruthSet:
    images: dict[str, list[AnnotatedFace]] = field(default_factory=dict)


@dataclass
class Detection:
    box: tuple[float, float, float, float]  # x_min, y_min, x_max, y_max
    score: float


@dataclass
class PredictionSet:
    images: dict[str, list[Detection]] = field(default_factory=dict)


def _is_zero_dummy(line: str) -> bool:
    parts = line.split()
    return len(parts) >= 4 and all(p == "0" for p in parts)


def parse_widerface_annotations(lines: Iterable[str]) -> GroundTruthSet:
    """Parse the annotation layout: path line, face-count line, then one
    10-integer record per face. A count of 0 may be followed by one all-zero
    dummy record, which is consumed and discarded."""
    rows = [line.rstrip("\n") for line in lines]
    gts = GroundTruthSet()
    i = 0
    while i < len(rows):
        path = rows[i].strip()
        i += 1
        if not path:
            continue
        if i >= len(rows):
            raise ParseError(i, f"missing face count after image {path!r}")
        try:
            count = int(rows[i].strip())
        except ValueError:
            raise ParseError(i + 1, f"bad face count {rows[i]!r}") from None
        if count < 0:
            raise ParseError(i + 1, f"negative face count {count}")
        i += 1
        faces = []
        if count == 0:
            if i < len(rows) and _is_zero_dummy(rows[i]):
                i += 1
        else:
            for k in range(count):
                if i >= len(rows):
                    raise ParseError(i, f"image {path!r}: expected {count} faces, got {k}")
                parts = rows[i].split()
                if len(parts) < 10:
                    raise ParseError(i + 1, f"expected 10 fields, got {len(parts)}")
                try:
                    vals = [int(p) for p in parts[:10]]
                except ValueError:
                    raise ParseError(i + 1, f"non-integer face record {rows[i]!r}") from None
                faces.append(AnnotatedFace(*vals))
                i += 1
        gts.images[path] = faces
    return gts


def parse_predictions(lines: Iterable[str]) -> PredictionSet:
    """Parse the submission layout: name line, count line, then one
    'x y w h score' record per detection."""
    rows = [line.rstrip("\n") for line in lines]
    preds = PredictionSet()
    i = 0
    while i < len(rows):
        path = rows[i].strip()
        i += 1
        if not path:
            continue
        if i >= len(rows):
            raise ParseError(i, f"missing detection count after image {path!r}")
        try:
            count = int(rows[i].strip())
        except ValueError:
            raise ParseError(i + 1, f"bad detection count {rows[i]!r}") from None
        if count < 0:
            raise ParseError(i + 1, f"negative detection count {count}")
        i += 1
        dets = []
        for k in range(count):
            if i >= len(rows):
                raise ParseError(i, f"image {path!r}: expected {count} detections, got {k}")
            parts = rows[i].split()
            if len(parts) < 5:
                raise ParseError(i + 1, f"expected 5 fields, got {len(parts)}")
            try:
                x, y, w, h, score = (float(p) for p in parts[:5])
            except ValueError:
                raise ParseError(i + 1, f"non-numeric detection {rows[i]!r}") from None
            if not (0.0 <= score <= 1.0):
                raise ParseError(i + 1, f"score {score} outside [0, 1]")
            dets.append(Detection((x, y, x + w, y + h), score))
            i += 1
        preds.images[path] = dets
    return preds


def _det_array(dets: list[Detection]) -> tuple[np.ndarray, np.ndarray]:
    boxes = np.array([d.box for d in dets], dtype=float).reshape(-1, 4)
    scores = np.array([d.score for d in dets], dtype=float)
    return boxes, scores


def nms(dets: list[Detection], iou_threshold: float = NMS_IOU_DEFAULT,
        pre_topk: int = NMS_PRE_TOPK_DEFAULT,
        post_topk: int = NMS_POST_TOPK_DEFAULT) -> list[Detection]:
    """Greedy non-maximum suppression by descending score (ties by lower
    input index); a box is suppressed when its IoU with any kept box exceeds
    the threshold. Input is pre-truncated to ``pre_topk``, output to
    ``post_topk``."""
    if not dets:
        return []
    boxes, scores = _det_array(dets)
    order = sorted(range(len(dets)), key=lambda i: (-scores[i], i))[:pre_topk]
    kept: list[int] = []
    for i in order:
        if len(kept) >= post_topk:
            break
        if kept:
            overlaps = iou_matrix(boxes[kept], boxes[i:i + 1])[:, 0]
            if (overlaps > iou_threshold).any():
                continue
        kept.append(i)
    return [dets[i] for i in kept]


def match_detections(dets: list[Detection], gts: list[AnnotatedFace],
                     iou_threshold: float = MATCH_IOU_DEFAULT,
                     skip_override: list[bool] | None = None) -> np.ndarray:
    """Per-detection flags in input order: MATCHED, FALSE_POSITIVE, or
    DISCARDED (overlapped only a skip-marked gt).

    Detections are processed by descending score (ties by input index); each
    claims the unmatched non-skip gt of maximum IoU at or above the
    threshold, one detection per gt.
    """
    flags = np.full(len(dets), FALSE_POSITIVE, dtype=np.int8)
    if not dets:
        return flags
    skip = [f.skip for f in gts] if skip_override is None else list(skip_override)
    boxes, scores = _det_array(dets)
    gt_boxes = np.array([f.xyxy() for f in gts], dtype=float).reshape(-1, 4)
    ious = iou_matrix(boxes, gt_boxes) if gts else np.zeros((len(dets), 0))

    taken = [False] * len(gts)
    for i in sorted(range(len(dets)), key=lambda i: (-scores[i], i)):
        best_g, best_v = -1, 0.0
        hit_skip = False
        for g in range(len(gts)):
            v = ious[i, g]
            if v < iou_threshold:
                continue
            if skip[g]:
                hit_skip = True
                continue
            if taken[g]:
                continue
            if v > best_v:
                best_g, best_v = g, v
        if best_g >= 0:
            taken[best_g] = True
            flags[i] = MATCHED
        elif hit_skip:
            flags[i] = DISCARDED
    return flags


def pr_curve(flags: np.ndarray, scores: np.ndarray, num_gts: int,
             num_thresholds: int = NUM_THRESHOLDS_DEFAULT) -> list[tuple[float, float, float]]:
    """(precision, recall, threshold) points over ``num_thresholds`` evenly
    spaced thresholds in (0, 1], ordered by descending threshold. Precision
    is 1.0 where no detections survive; recall uses ``num_gts``."""
    flags = np.asarray(flags)
    scores = np.asarray(scores, dtype=float)
    active = flags != DISCARDED
    tp_scores = np.sort(scores[active & (flags == MATCHED)])
    fp_scores = np.sort(scores[active & (flags == FALSE_POSITIVE)])
    points = []
    for k in range(num_thresholds, 0, -1):
        t = k / num_thresholds
        tp = tp_scores.size - np.searchsorted(tp_scores, t, side="left")
        fp = fp_scores.size - np.searchsorted(fp_scores, t, side="left")
        precision = tp / (tp + fp) if (tp + fp) > 0 else 1.0
        recall = tp / num_gts if num_gts > 0 else 0.0
        points.append((float(precision), float(recall), float(t)))
    return points


def average_precision(curve: list[tuple[float, float, float]]) -> float:
    """Continuous interpolated AP: monotone non-increasing precision envelope
    integrated over recall increments."""
    if not curve:
        return 0.0
    pts = sorted(curve, key=lambda p: p[1])
    prec = np.array([p[0] for p in pts])
    rec = np.array([p[1] for p in pts])
    env = np.maximum.accumulate(prec[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for p, r in zip(env, rec):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def count_false_alarms(flags: np.ndarray, scores: np.ndarray,
                       score_threshold: float = NFA_SCORE_DEFAULT) -> int:
    """Unmatched (non-discarded) detections at or above the score threshold."""
    flags = np.asarray(flags)
    scores = np.asarray(scores, dtype=float)
    return int(((flags == FALSE_POSITIVE) & (scores >= score_threshold)).sum())


@dataclass
class SubsetReport:
    ap: float
    nfa: int
    curve: list[tuple[float, float, float]]


@dataclass
class EvalReport:
    subsets: dict[str, SubsetReport]

    def to_json(self) -> str:
        payload = {
            name: {"ap": rep.ap, "nfa": rep.nfa,
                   "curve": [list(p) for p in rep.curve]}
            for name, rep in self.subsets.items()
        }
        return json.dumps(payload, sort_keys=True)

    def curve_csv(self, subset: str = "all") -> str:
        rows = ["precision,recall,threshold"]
        for p, r, t in self.subsets[subset].curve:
            rows.append(f"{p:.9f},{r:.9f},{t:.6f}")
        return "\n".join(rows) + "\n"


def evaluate(gts: GroundTruthSet, preds: PredictionSet,
             subsets: dict[str, dict[str, list[int]]] | None = None,
             match_iou: float = MATCH_IOU_DEFAULT,
             nfa_threshold: float = NFA_SCORE_DEFAULT,
             num_thresholds: int = NUM_THRESHOLDS_DEFAULT) -> EvalReport:
    """Full evaluation over the 'all' subset plus any named subsets.

    A subset maps image path -> kept gt indices; gts outside the subset are
    skip-marked (ignore semantics). Predictions for images missing from the
    ground truth are an error.
    """
    unknown = sorted(set(preds.images) - set(gts.images))
    if unknown:
        raise EvalError(f"predictions reference unknown images: {', '.join(unknown)}")

    all_subsets: dict[str, dict[str, list[int]] | None] = {"all": None}
    for name, mapping in (subsets or {}).items():
        all_subsets[name] = mapping

    reports = {}
    for name, mapping in all_subsets.items():
        flags_parts, score_parts = [], []
        num_gts = 0
        for path in sorted(gts.images):
            faces = gts.images[path]
            if mapping is None:
                skip = [f.skip for f in faces]
            else:
                kept = set(mapping.get(path, []))
                skip = [f.skip or (i not in kept) for i, f in enumerate(faces)]
            num_gts += sum(1 for s in skip if not s)
            dets = preds.images.get(path, [])
            flags_parts.append(match_detections(dets, faces, match_iou, skip))
            score_parts.append(np.array([d.score for d in dets], dtype=float))
        flags = np.concatenate(flags_parts) if flags_parts else np.zeros(0, np.int8)
        scores = np.concatenate(score_parts) if score_parts else np.zeros(0)
        curve = pr_curve(flags, scores, num_gts, num_thresholds)
        reports[name] = SubsetReport(
            ap=average_precision(curve),
            nfa=count_false_alarms(flags, scores, nfa_threshold),
            curve=curve,
        )
    return EvalReport(subsets=reports)
