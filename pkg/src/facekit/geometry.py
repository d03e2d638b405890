"""Boxes, box metrics, and pyramid anchor-grid generation.

Everything here is pure and deterministic; the rest of the package builds
on these primitives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

# Pyramid levels p2..p7: stride doubles per level, anchor side is 4x stride,
# giving the anchor scale set {16, 32, 64, 128, 256, 512}.
LAYER_NAMES = ("p2", "p3", "p4", "p5", "p6", "p7")
LAYER_STRIDES = (4, 8, 16, 32, 64, 128)
ANCHOR_SCALE_SET = (16, 32, 64, 128, 256, 512)


class GeometryError(ValueError):
    """Raised for degenerate boxes or invalid grid dimensions."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in continuous pixel coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise GeometryError(
                f"degenerate box: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box":
        return cls(x, y, x + w, y + h)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class PyramidLayer:
    """One feature-pyramid level: its name, stride, and square anchor side."""

    name: str
    stride: int
    anchor_scale: int

    def __post_init__(self):
        if self.name not in LAYER_NAMES:
            raise GeometryError(f"unknown pyramid layer {self.name!r}")
        if self.anchor_scale != 4 * self.stride:
            raise GeometryError("anchor_scale must be 4x stride")


PYRAMID_LAYERS = tuple(
    PyramidLayer(name, stride, 4 * stride)
    for name, stride in zip(LAYER_NAMES, LAYER_STRIDES)
)
LAYER_BY_NAME = {layer.name: layer for layer in PYRAMID_LAYERS}


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes, in [0, 1]."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def center_distance(a: Box, b: Box) -> float:
    """Euclidean distance between box centers (CPD)."""
    (ax, ay), (bx, by) = a.center, b.center
    return math.hypot(ax - bx, ay - by)


def face_scale(b: Box) -> float:
    """Scalar face scale: geometric mean of width and height."""
    return math.sqrt(b.width * b.height)


@dataclass(frozen=True)
class Anchor:
    global_index: int
    layer_name: str
    row: int
    col: int
    box: Box


class AnchorGrid:
    """All anchors of the 6-level pyramid over one image.

    Anchors are layer-major with contiguous global indices; the anchor at
    (row, col) of a layer is the square of side ``anchor_scale`` centered at
    the cell center ``(stride*(col+0.5), stride*(row+0.5))``. Anchors near the
    border may overflow the image and are not clipped.
    """

    def __init__(self, image_width: int, image_height: int):
        if image_width < 1 or image_height < 1:
            raise GeometryError("image dimensions must be >= 1")
        self.image_width = int(image_width)
        self.image_height = int(image_height)
        self.layers = PYRAMID_LAYERS
        self.layer_shapes: dict[str, tuple[int, int]] = {}
        self.layer_offsets: dict[str, int] = {}

        boxes = []
        layer_ids = []
        offset = 0
        for li, layer in enumerate(self.layers):
            rows = math.ceil(self.image_height / layer.stride)
            cols = math.ceil(self.image_width / layer.stride)
            self.layer_shapes[layer.name] = (rows, cols)
            self.layer_offsets[layer.name] = offset
            cy = (np.arange(rows) + 0.5) * layer.stride
            cx = (np.arange(cols) + 0.5) * layer.stride
            gx, gy = np.meshgrid(cx, cy)
            half = layer.anchor_scale / 2.0
            layer_boxes = np.stack(
                [gx - half, gy - half, gx + half, gy + half], axis=-1
            ).reshape(-1, 4)
            boxes.append(layer_boxes)
            layer_ids.append(np.full(rows * cols, li, dtype=np.int64))
            offset += rows * cols

        self.boxes = np.concatenate(boxes, axis=0)
        self.layer_ids = np.concatenate(layer_ids, axis=0)
        self.centers = 0.5 * (self.boxes[:, :2] + self.boxes[:, 2:])

    def __len__(self) -> int:
        return self.boxes.shape[0]

    def layer_slice(self, layer_name: str) -> slice:
        rows, cols = self.layer_shapes[layer_name]
        start = self.layer_offsets[layer_name]
        return slice(start, start + rows * cols)

    def anchor(self, global_index: int) -> Anchor:
        li = int(self.layer_ids[global_index])
        layer = self.layers[li]
        local = global_index - self.layer_offsets[layer.name]
        _, cols = self.layer_shapes[layer.name]
        row, col = divmod(local, cols)
        x0, y0, x1, y1 = self.boxes[global_index]
        return Anchor(global_index, layer.name, row, col, Box(x0, y0, x1, y1))

    def position(self, global_index: int) -> tuple[str, int, int]:
        """(layer_name, row, col) of an anchor by global index."""
        a = self.anchor(global_index)
        return (a.layer_name, a.row, a.col)

    def iter_anchors(self) -> Iterator[Anchor]:
        for i in range(len(self)):
            yield self.anchor(i)


def generate_anchor_grid(width: int, height: int) -> AnchorGrid:
    """Build the full p2..p7 anchor grid for an image of the given size."""
    return AnchorGrid(width, height)


def iou_matrix(anchor_boxes: np.ndarray, gt_boxes: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (n, 4) anchors and (m, 4) ground truths -> (n, m)."""
    if anchor_boxes.size == 0 or gt_boxes.size == 0:
        return np.zeros((anchor_boxes.shape[0], gt_boxes.shape[0]))
    ax0, ay0, ax1, ay1 = (anchor_boxes[:, i, None] for i in range(4))
    gx0, gy0, gx1, gy1 = (gt_boxes[None, :, i] for i in range(4))
    iw = np.clip(np.minimum(ax1, gx1) - np.maximum(ax0, gx0), 0, None)
    ih = np.clip(np.minimum(ay1, gy1) - np.maximum(ay0, gy0), 0, None)
    inter = iw * ih
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_g = (gx1 - gx0) * (gy1 - gy0)
    return inter / (area_a + area_g - inter)


def boxes_to_array(boxes: list[Box]) -> np.ndarray:
    """(n, 4) float array from a list of boxes."""
    if not boxes:
        return np.zeros((0, 4))
    return np.array([b.as_tuple() for b in boxes], dtype=float)
