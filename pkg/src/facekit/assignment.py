"""Anchor label assignment: standard IoU matching plus online incremental
anchor mining that equalizes per-ground-truth match counts within each
pyramid layer using score-ranked CPD/IoU candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import AnchorGrid, Box, boxes_to_array, iou_matrix

# Tri-state anchor labels.
POSITIVE = 1
NEGATIVE = 0
IGNORE = -1


class AssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class MatchConfig:
    pos_iou_threshold: float = 0.5
    neg_iou_threshold: float = 0.4
    guarantee_best_anchor: bool = True

    def __post_init__(self):
        if not (0.0 <= self.neg_iou_threshold <= self.pos_iou_threshold <= 1.0):
            raise AssignmentError(
                "thresholds must satisfy 0 <= neg <= pos <= 1, got "
                f"neg={self.neg_iou_threshold} pos={self.pos_iou_threshold}"
            )


@dataclass
class LayerStats:
    """Per-layer matching statistics: which gts matched and the max count."""

    matched_gts: set[int] = field(default_factory=set)
    max_match_count: int = 0
    per_gt_counts: dict[int, int] = field(default_factory=dict)


class AssignmentResult:
    """Per-anchor tri-state labels with per-gt and per-layer statistics.

    ``labels`` is int8 {1, 0, -1} for {Positive, Negative, Ignore} and
    ``gt_indices`` is int32 with the matched gt for positives, -1 otherwise.
    """

    def __init__(self, grid: AnchorGrid, labels: np.ndarray, gt_indices: np.ndarray,
                 num_gts: int):
        if labels.shape[0] != len(grid) or gt_indices.shape[0] != len(grid):
            raise AssignmentError("label arrays must cover every anchor")
        self.grid = grid
        self.labels = labels.astype(np.int8)
        self.gt_indices = gt_indices.astype(np.int32)
        self.num_gts = num_gts
        pos = self.labels == POSITIVE
        if pos.any():
            bad = self.gt_indices[pos]
            if bad.min() < 0 or bad.max() >= num_gts:
                raise AssignmentError("positive label references a missing gt")
        self.per_gt_counts = self._count_per_gt()
        self.per_layer_stats = self._layer_stats()

    def _count_per_gt(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for g in self.gt_indices[self.labels == POSITIVE]:
            counts[int(g)] = counts.get(int(g), 0) + 1
        return counts

    def _layer_stats(self) -> dict[str, LayerStats]:
        stats = {layer.name: LayerStats() for layer in self.grid.layers}
        for layer in self.grid.layers:
            sl = self.grid.layer_slice(layer.name)
            pos = self.labels[sl] == POSITIVE
            st = stats[layer.name]
            for g in self.gt_indices[sl][pos]:
                st.per_gt_counts[int(g)] = st.per_gt_counts.get(int(g), 0) + 1
            st.matched_gts = set(st.per_gt_counts)
            st.max_match_count = max(st.per_gt_counts.values(), default=0)
        return stats

    def copy_labels(self) -> tuple[np.ndarray, np.ndarray]:
        return self.labels.copy(), self.gt_indices.copy()

    def to_lines(self, scores: np.ndarray | None = None) -> list[str]:
        """Serialize as 'global_index label gt_index score' lines."""
        out = []
        for i in range(len(self.grid)):
            score = float(scores[i]) if scores is not None else 0.0
            out.append(f"{i} {int(self.labels[i])} {int(self.gt_indices[i])} {score:.6f}")
        return out


def standard_match(grid: AnchorGrid, gts: list[Box],
                   cfg: MatchConfig = MatchConfig()) -> AssignmentResult:
    """IoU-threshold matching with an optional best-anchor guarantee per gt.

    An anchor is Positive to its argmax-IoU gt when the max IoU reaches the
    positive threshold, Negative below the negative threshold, and Ignore in
    between. With ``guarantee_best_anchor``, every gt keeps its highest-IoU
    anchor as Positive (ties broken by the lower global index; an anchor
    already claimed by an earlier gt falls through to the next best).
    """
    n = len(grid)
    labels = np.full(n, NEGATIVE, dtype=np.int8)
    gt_indices = np.full(n, -1, dtype=np.int32)
    if not gts:
        return AssignmentResult(grid, labels, gt_indices, 0)

    ious = iou_matrix(grid.boxes, boxes_to_array(gts))
    best_gt = np.argmax(ious, axis=1)
    best_iou = ious[np.arange(n), best_gt]

    pos_mask = best_iou >= cfg.pos_iou_threshold
    ign_mask = (~pos_mask) & (best_iou >= cfg.neg_iou_threshold)
    labels[pos_mask] = POSITIVE
    gt_indices[pos_mask] = best_gt[pos_mask]
    labels[ign_mask] = IGNORE

    if cfg.guarantee_best_anchor:
        claimed: set[int] = set()
        for g in range(len(gts)):
            # Descending IoU, ties by lower global index (stable sort on -iou).
            order = np.argsort(-ious[:, g], kind="stable")
            for a in order:
                a = int(a)
                if a in claimed:
                    continue
                labels[a] = POSITIVE
                gt_indices[a] = g
                claimed.add(a)
                break

    return AssignmentResult(grid, labels, gt_indices, len(gts))


def _ranked_candidates(pool: np.ndarray, keys: np.ndarray, k: int,
                       descending: bool) -> list[int]:
    """Top-k anchors from ``pool`` by ``keys``; ties by lower global index."""
    if pool.size == 0 or k <= 0:
        return []
    sign = -1.0 if descending else 1.0
    order = sorted(range(pool.size), key=lambda i: (sign * keys[i], pool[i]))
    return [int(pool[i]) for i in order[:k]]


def ali_ams(base: AssignmentResult, grid: AnchorGrid, gts: list[Box],
            scores: np.ndarray) -> AssignmentResult:
    """Incremental anchor mining over a standard matching result.

    Within each pyramid layer, every matched gt is topped up to the layer's
    maximum per-gt match count T. Candidates are the union of the T closest
    anchors by center distance and the T highest-IoU anchors (among anchors
    not yet Positive to any gt), re-ranked by predicted score; the top
    ``T - current_count`` become Positive. Existing labels are never removed.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.shape[0] != len(grid):
        raise AssignmentError("score map length must equal anchor count")
    if scores.size and (scores.min() < 0 or scores.max() > 1):
        raise AssignmentError("scores must be probabilities in [0, 1]")
    labels, gt_indices = base.copy_labels()
    if not gts:
        return AssignmentResult(grid, labels, gt_indices, 0)

    gt_arr = boxes_to_array(gts)
    gt_centers = 0.5 * (gt_arr[:, :2] + gt_arr[:, 2:])

    for layer in grid.layers:
        st = base.per_layer_stats[layer.name]
        if not st.matched_gts:
            continue
        t = st.max_match_count
        sl = grid.layer_slice(layer.name)
        layer_idx = np.arange(sl.start, sl.stop)
        for g in sorted(st.matched_gts):
            need = t - st.per_gt_counts[g]
            if need <= 0:
                continue
            free = layer_idx[labels[layer_idx] != POSITIVE]
            if free.size == 0:
                continue
            dists = np.hypot(
                grid.centers[free, 0] - gt_centers[g, 0],
                grid.centers[free, 1] - gt_centers[g, 1],
            )
            layer_ious = iou_matrix(grid.boxes[free], gt_arr[g:g + 1])[:, 0]
            cpd_top = _ranked_candidates(free, dists, t, descending=False)
            iou_top = _ranked_candidates(free, layer_ious, t, descending=True)
            candidates = sorted(set(cpd_top) | set(iou_top))
            candidates.sort(key=lambda a: (-scores[a], a))
            for a in candidates[:need]:
                labels[a] = POSITIVE
                gt_indices[a] = g

    return AssignmentResult(grid, labels, gt_indices, len(gts))


def layer_match_stats(result: AssignmentResult) -> dict[str, dict]:
    """Per-layer (gt_count, anchor_count, per-gt histogram), recomputed from
    the labels alone."""
    out = {}
    for layer in result.grid.layers:
        sl = result.grid.layer_slice(layer.name)
        pos = result.labels[sl] == POSITIVE
        hist: dict[int, int] = {}
        for g in result.gt_indices[sl][pos]:
            hist[int(g)] = hist.get(int(g), 0) + 1
        out[layer.name] = {
            "gt_count": len(hist),
            "anchor_count": int(pos.sum()),
            "per_gt": hist,
        }
    return out


def parse_assignment_lines(lines: list[str]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :meth:`AssignmentResult.to_lines` -> (labels, gt_indices, scores)."""
    records = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise AssignmentError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            records.append((int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3])))
        except ValueError as exc:
            raise AssignmentError(f"line {lineno}: {exc}") from exc
    records.sort()
    labels = np.array([r[1] for r in records], dtype=np.int8)
    gt_indices = np.array([r[2] for r in records], dtype=np.int32)
    scores = np.array([r[3] for r in records], dtype=float)
    return labels, gt_indices, scores
