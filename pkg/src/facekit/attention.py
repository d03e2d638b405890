"""False-alarm suppression machinery: high-confidence anchor selection,
neighborhood attention masks, feature combination, discrepancy supervision
labels, and the focal / combined losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import IGNORE, NEGATIVE, POSITIVE, AssignmentResult

EPS = 1e-7


class AttentionError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    gamma_balance: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    confidence_threshold: float = 0.5
    neighborhood_sizes: tuple[int, ...] = (3, 5)

    def __post_init__(self):
        if self.gamma_balance < 0:
            raise AttentionError("gamma_balance must be >= 0")
        if not (0.0 < self.confidence_threshold < 1.0):
            raise AttentionError("confidence_threshold must lie in (0, 1)")
        for n in self.neighborhood_sizes:
            if n <= 0 or n % 2 == 0:
                raise AttentionError("neighborhood sizes must be odd and positive")


def _check_scores(scores: np.ndarray, n: int) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (n,):
        raise AttentionError(f"score map must have shape ({n},), got {scores.shape}")
    if scores.size and (np.isnan(scores).any() or scores.min() < 0 or scores.max() > 1):
        raise AttentionError("scores must be probabilities in [0, 1]")
    return scores


def select_high_confidence(scores: np.ndarray, assignment: AssignmentResult,
                           threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Split the anchors scoring at or above the threshold into correctly
    predicted positives and falsely confident negatives (global indices).
    Ignore-labeled anchors belong to neither set."""
    scores = _check_scores(scores, len(assignment.grid))
    confident = scores >= threshold
    correct_pos = np.flatnonzero(confident & (assignment.labels == POSITIVE))
    false_neg = np.flatnonzero(confident & (assignment.labels == NEGATIVE))
    return correct_pos, false_neg


def attention_mask(positions: set[tuple[int, int]], dims: tuple[int, int],
                   n: int) -> np.ndarray:
    """Binary (rows, cols) mask with ones in the n x n Chebyshev neighborhood
    of every position, clipped at the borders."""
    if n <= 0 or n % 2 == 0:
        raise AttentionError(f"neighborhood size must be odd and positive, got {n}")
    rows, cols = dims
    mask = np.zeros((rows, cols), dtype=np.uint8)
    radius = (n - 1) // 2
    for row, col in positions:
        if not (0 <= row < rows and 0 <= col < cols):
            raise AttentionError(f"position ({row}, {col}) outside {dims}")
        r0, r1 = max(0, row - radius), min(rows, row + radius + 1)
        c0, c1 = max(0, col - radius), min(cols, col + radius + 1)
        mask[r0:r1, c0:c1] = 1
    return mask


def layer_attention_masks(anchor_indices: np.ndarray, assignment: AssignmentResult,
                          n: int) -> dict[str, np.ndarray]:
    """Per-layer attention masks from global anchor indices."""
    grid = assignment.grid
    per_layer: dict[str, set[tuple[int, int]]] = {l.name: set() for l in grid.layers}
    for idx in anchor_indices:
        layer_name, row, col = grid.position(int(idx))
        per_layer[layer_name].add((row, col))
    return {
        name: attention_mask(per_layer[name], grid.layer_shapes[name], n)
        for name in per_layer
    }


def combine_features(context: np.ndarray, masks: list[np.ndarray],
                     pyramid: np.ndarray) -> np.ndarray:
    """pyramid + sum_k(context * mask_k), masks broadcast across channels.

    Feature maps are (rows, cols, channels); masks are (rows, cols).
    """
    context = np.asarray(context, dtype=float)
    pyramid = np.asarray(pyramid, dtype=float)
    if context.shape != pyramid.shape:
        raise AttentionError(
            f"context {context.shape} and pyramid {pyramid.shape} shapes differ")
    out = pyramid.copy()
    for mask in masks:
        mask = np.asarray(mask)
        if mask.shape != context.shape[:2]:
            raise AttentionError(
                f"mask {mask.shape} does not match spatial dims {context.shape[:2]}")
        out += context * mask[:, :, None]
    return out


def discrepancy_labels(scores: np.ndarray, assignment: AssignmentResult,
                       threshold: float = 0.5) -> np.ndarray:
    """Supervision labels for the progressive classifier: positive at
    correctly predicted positives, negative at falsely confident negatives,
    ignore elsewhere. int8 {1, 0, -1}."""
    correct_pos, false_neg = select_high_confidence(scores, assignment, threshold)
    labels = np.full(len(assignment.grid), IGNORE, dtype=np.int8)
    labels[correct_pos] = POSITIVE
    labels[false_neg] = NEGATIVE
    return labels


def focal_loss(scores: np.ndarray, labels: np.ndarray, alpha: float = 0.25,
               gamma: float = 2.0) -> float:
    """Sigmoid focal loss over probabilities, normalized by the positive
    count (at least 1). Ignore-labeled entries contribute nothing."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise AttentionError("scores and labels must align")
    p = np.clip(scores, EPS, 1.0 - EPS)
    pos = labels == POSITIVE
    neg = labels == NEGATIVE
    p_t = np.where(pos, p, 1.0 - p)
    alpha_t = np.where(pos, alpha, 1.0 - alpha)
    terms = alpha_t * (1.0 - p_t) ** gamma * (-np.log(p_t))
    total = terms[pos | neg].sum()
    return float(total / max(1, int(pos.sum())))


def combined_loss(main_scores: np.ndarray, progressive_scores: np.ndarray,
                  labels: np.ndarray, discrepancy: np.ndarray,
                  cfg: LossConfig = LossConfig()) -> float:
    """Main focal loss plus gamma_balance times the progressive classifier's
    focal loss on the discrepancy labels."""
    main = focal_loss(main_scores, labels, cfg.focal_alpha, cfg.focal_gamma)
    prog = focal_loss(progressive_scores, discrepancy, cfg.focal_alpha, cfg.focal_gamma)
    return main + cfg.gamma_balance * prog


def mask_to_lines(masks: dict[str, np.ndarray]) -> list[str]:
    """Serialize per-layer masks as 'layer row col' lines for the set cells."""
    out = []
    for name in sorted(masks):
        rows, cols = np.nonzero(masks[name])
        for r, c in zip(rows, cols):
            out.append(f"{name} {int(r)} {int(c)}")
    return out


def labels_to_lines(labels: np.ndarray) -> list[str]:
    """Serialize tri-state labels as 'global_index label' lines."""
    return [f"{i} {int(v)}" for i, v in enumerate(labels)]
