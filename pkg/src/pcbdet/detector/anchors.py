"""Anchor generation, box encoding/decoding and anchor-to-ground-truth matching."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pcbdet.boxes import as_boxes, iou_matrix, validate_boxes
from pcbdet.detector.config import AnchorConfig
from pcbdet.errors import ConfigError, ContractError

NEGATIVE = -1
IGNORE = -2
# log-space clamp for dw/dh before exponentiation
MAX_LOG_SCALE = math.log(1000.0 / 16)


@dataclass
class AnchorLevel:
    stride: int
    base_size: float
    scales: tuple[float, ...]
    aspect_ratios: tuple[float, ...]
    grid_hw: tuple[int, int]
    boxes: np.ndarray  # (h * w * |scales| * |ratios|, 4)


@dataclass
class AnchorGrid:
    levels: list[AnchorLevel]

    @property
    def boxes(self) -> np.ndarray:
        return np.concatenate([lv.boxes for lv in self.levels], axis=0)

    @property
    def counts(self) -> list[int]:
        return [len(lv.boxes) for lv in self.levels]

    def __len__(self) -> int:
        return sum(self.counts)


def _cell_shapes(base_size: float, scales, ratios) -> np.ndarray:
    # (|scales| * |ratios|, 2) of (w, h), ratio = h / w, area preserved
    shapes = []
    for s in scales:
        size = base_size * s
        for r in ratios:
            shapes.append((size / math.sqrt(r), size * math.sqrt(r)))
    return np.array(shapes)


def generate_anchors(image_hw: tuple[int, int], strides, cfg: AnchorConfig) -> AnchorGrid:
    """Anchors ordered level-major, then row-major over cells, then scale, then ratio."""
    h, w = image_hw
    levels = []
    for stride in strides:
        if stride < 1 or h % stride or w % stride:
            raise ConfigError(f"image {h}x{w} is not divisible by anchor stride {stride}")
        gh, gw = h // stride, w // stride
        base = cfg.base_multiplier * stride
        wh = _cell_shapes(base, cfg.scales, cfg.aspect_ratios)
        cy, cx = np.meshgrid((np.arange(gh) + 0.5) * stride, (np.arange(gw) + 0.5) * stride, indexing="ij")
        centers = np.stack([cx.ravel(), cy.ravel()], axis=1)[:, None, :]
        half = wh[None, :, :] / 2
        boxes = np.concatenate([centers - half, centers + half], axis=2).reshape(-1, 4)
        levels.append(AnchorLevel(stride, base, cfg.scales, cfg.aspect_ratios, (gh, gw), boxes))
    return AnchorGrid(levels)


def _center_form(boxes: np.ndarray):
    w = boxes[..., 2] - boxes[..., 0]
    h = boxes[..., 3] - boxes[..., 1]
    return boxes[..., 0] + 0.5 * w, boxes[..., 1] + 0.5 * h, w, h


def encode_boxes(gt, anchors) -> np.ndarray:
    """Offsets ``(dx, dy, dw, dh)`` taking ``anchors`` onto ``gt`` (broadcasting over leading dims)."""
    gt, anchors = np.asarray(gt, dtype=np.float64), np.asarray(anchors, dtype=np.float64)
    gx, gy, gw, gh = _center_form(gt)
    ax, ay, aw, ah = _center_form(anchors)
    if np.any(gw <= 0) or np.any(gh <= 0) or np.any(aw <= 0) or np.any(ah <= 0):
        raise ContractError("encode_boxes needs boxes with positive width and height")
    return np.stack([(gx - ax) / aw, (gy - ay) / ah, np.log(gw / aw), np.log(gh / ah)], axis=-1)


def decode_boxes(offsets, anchors, clip_to: tuple[int, int] | None = None) -> np.ndarray:
    """Inverse of :func:`encode_boxes`, with dw/dh clamped and optional clipping to ``(h, w)``."""
    offsets, anchors = np.asarray(offsets, dtype=np.float64), np.asarray(anchors, dtype=np.float64)
    ax, ay, aw, ah = _center_form(anchors)
    cx = offsets[..., 0] * aw + ax
    cy = offsets[..., 1] * ah + ay
    w = np.exp(np.minimum(offsets[..., 2], MAX_LOG_SCALE)) * aw
    h = np.exp(np.minimum(offsets[..., 3], MAX_LOG_SCALE)) * ah
    out = np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1)
    if clip_to is not None:
        ih, iw = clip_to
        out[..., 0::2] = np.clip(out[..., 0::2], 0, iw)
        out[..., 1::2] = np.clip(out[..., 1::2], 0, ih)
    return out


def match_anchors(anchors, gt_boxes, pos_thresh: float = 0.5, neg_thresh: float = 0.4) -> np.ndarray:
    """Per-anchor label: gt index (positive), ``NEGATIVE`` or ``IGNORE``.

    Positives take the argmax-IoU ground truth (lowest index on ties). Each
    ground truth's best anchor is then forced positive, lower gt indices
    winning when two ground truths share a best anchor.
    """
    if pos_thresh < neg_thresh:
        raise ContractError("match_anchors: pos_thresh must be >= neg_thresh")
    anchors = anchors.boxes if isinstance(anchors, AnchorGrid) else as_boxes(anchors)
    if len(anchors) == 0:
        raise ContractError("match_anchors: no anchors")
    gt = as_boxes(gt_boxes)
    labels = np.full(len(anchors), NEGATIVE, dtype=np.int64)
    if len(gt) == 0:
        return labels
    validate_boxes(gt, "ground-truth box")
    ious = iou_matrix(anchors, gt)
    best_gt = ious.argmax(axis=1)
    best_iou = ious[np.arange(len(anchors)), best_gt]
    labels[best_iou >= neg_thresh] = IGNORE
    pos = best_iou >= pos_thresh
    labels[pos] = best_gt[pos]
    best_anchor = ious.argmax(axis=0)
    for j in range(len(gt) - 1, -1, -1):
        if ious[best_anchor[j], j] > 0:
            labels[best_anchor[j]] = j
    return labels
