"""Target assignment, the learning-rate schedule and the training step."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from pcbdet.detector.anchors import NEGATIVE, AnchorGrid, encode_boxes, match_anchors
from pcbdet.detector.config import DetectorConfig
from pcbdet.detector.losses import focal_loss, smooth_l1
from pcbdet.detector.model import anchors_for, forward
from pcbdet.errors import ConfigError, NumericError
from pcbdet.nn import functional as F
from pcbdet.nn.optim import AdamState, adam_step, check_grads
from pcbdet.nn.params import ParamStore
from pcbdet.nn.tensor import Tensor


@dataclass
class Batch:
    images: np.ndarray  # (n, 3, H, W) float32
    boxes: list[np.ndarray]  # per image (m, 4)
    classes: list[np.ndarray]  # per image (m,)

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass(frozen=True)
class LossBreakdown:
    focal: float
    box_reg: float
    total: float
    n_positive_anchors: int

    def to_dict(self) -> dict:
        return {
            "focal": self.focal,
            "box_reg": self.box_reg,
            "total": self.total,
            "n_positive_anchors": self.n_positive_anchors,
        }


@dataclass(frozen=True)
class LRSchedule:
    """Linear warmup over ``warmup_frac`` of the steps, then cosine decay to ``min_lr``."""

    base_lr: float = 2e-4
    total_steps: int = 1
    warmup_frac: float = 0.05
    min_lr: float = 1e-6

    @property
    def warmup_steps(self) -> int:
        return max(1, math.ceil(self.warmup_frac * self.total_steps)) if self.warmup_frac > 0 else 0

    def __call__(self, step: int) -> float:
        w = self.warmup_steps
        if step < w:
            return self.base_lr * (step + 1) / w
        span = max(1, self.total_steps - w)
        progress = min(1.0, (step - w) / span)
        return self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1 + math.cos(math.pi * progress))

    def describe(self) -> str:
        return (
            f"linear warmup {self.warmup_frac:.0%} of {self.total_steps} steps, "
            f"cosine decay {self.base_lr:g} -> {self.min_lr:g}"
        )


@dataclass
class OptimizerState:
    schedule: LRSchedule
    adam: AdamState = field(default_factory=AdamState)

    @property
    def step(self) -> int:
        return self.adam.step


def build_targets(anchors: AnchorGrid, batch: Batch, cfg: DetectorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-anchor class labels ``(n, N)`` (NEGATIVE / IGNORE / class id) and box targets ``(n, N, 4)``."""
    anchor_boxes = anchors.boxes
    n, total = len(batch), len(anchor_boxes)
    labels = np.full((n, total), NEGATIVE, dtype=np.int64)
    targets = np.zeros((n, total, 4), dtype=np.float32)
    for i in range(n):
        gt = np.asarray(batch.boxes[i], dtype=np.float64).reshape(-1, 4)
        cls = np.asarray(batch.classes[i], dtype=np.int64).reshape(-1)
        if len(gt) == 0:
            continue
        if cls.min() < 0 or cls.max() >= cfg.num_classes:
            raise ConfigError(f"class ids must be in [0, {cfg.num_classes}), got {cls.tolist()}")
        match = match_anchors(anchor_boxes, gt, cfg.pos_thresh, cfg.neg_thresh)
        pos = match >= 0
        labels[i] = np.where(pos, cls[np.maximum(match, 0)], match)
        targets[i, pos] = encode_boxes(gt[match[pos]], anchor_boxes[pos])
    return labels, targets


def compute_loss(params: ParamStore, batch: Batch, cfg: DetectorConfig) -> tuple[Tensor, Tensor, int]:
    hw = batch.images.shape[2:]
    anchors = anchors_for(cfg, hw)
    labels, targets = build_targets(anchors, batch, cfg)
    cls, reg = forward(Tensor(batch.images), params, cfg)
    fl = focal_loss(cls, labels, cfg.focal_alpha, cfg.focal_gamma)
    bl = smooth_l1(reg, targets.astype(reg.dtype), labels >= 0, cfg.smooth_l1_beta)
    return fl, bl, int((labels >= 0).sum())


def total_loss(params: ParamStore, batch: Batch, cfg: DetectorConfig) -> Tensor:
    fl, bl, _ = compute_loss(params, batch, cfg)
    return F.add(fl, bl)


def train_step(batch: Batch, params: ParamStore, state: OptimizerState, cfg: DetectorConfig) -> LossBreakdown:
    """Forward, focal + smooth-L1 loss, backward, one Adam update of unfrozen parameters.

    On a non-finite loss or gradient a :class:`NumericError` is raised before
    any parameter or optimizer state changes.
    """
    params.zero_grad()
    fl, bl, n_pos = compute_loss(params, batch, cfg)
    total = F.add(fl, bl)
    if not np.isfinite(total.data):
        raise NumericError("non-finite training loss")
    total.backward()
    check_grads(params)
    adam_step(params, state.adam, state.schedule(state.adam.step))
    params.zero_grad()
    focal, box = float(fl.data), float(bl.data)
    return LossBreakdown(focal, box, focal + box, n_pos)
